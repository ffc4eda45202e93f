use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::model::Variant;

/// One trained model scored at one availability level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub task: Task,
    pub variant: Variant,
    pub level: u8,
    pub fold: usize,
    pub seed: u64,
    /// Harmful-class F1 for binary tasks, macro F1 for multiclass.
    pub f1: f64,
    pub macro_f1: f64,
    /// Records whose text was read.
    pub text_rows: usize,
}

/// Identifies a row; a report never holds two rows with the same key.
pub type RowKey = (Task, Variant, std::cmp::Reverse<u8>, u64, usize);

impl EvalRow {
    pub fn key(&self) -> RowKey {
        (
            self.task,
            self.variant,
            std::cmp::Reverse(self.level),
            self.seed,
            self.fold,
        )
    }
}

/// Mean and sample standard deviation over folds × seeds for one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub task: Task,
    pub variant: Variant,
    pub level: u8,
    pub count: usize,
    pub f1_mean: f64,
    /// `None` for a single observation.
    pub f1_std: Option<f64>,
    pub macro_f1_mean: f64,
    pub macro_f1_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub dataset_hash: String,
    /// Seconds since the Unix epoch; the only field that differs between reruns.
    pub timestamp: u64,
}

/// Append-only collection of evaluation rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    meta: ReportMeta,
    rows: BTreeMap<RowKey, EvalRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Meta(ReportMeta),
    Row(EvalRow),
    Aggregate(Aggregate),
}

pub fn mean_and_sample_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl EvalReport {
    pub fn new(config_hash: impl Into<String>, dataset_hash: impl Into<String>) -> Self {
        Self {
            meta: ReportMeta {
                config_hash: config_hash.into(),
                dataset_hash: dataset_hash.into(),
                timestamp: now_unix(),
            },
            rows: BTreeMap::new(),
        }
    }

    pub fn meta(&self) -> &ReportMeta {
        &self.meta
    }

    pub fn set_timestamp(&mut self, timestamp: u64) {
        self.meta.timestamp = timestamp;
    }

    /// Adds a row; a second row for the same key is rejected.
    pub fn push(&mut self, row: EvalRow) -> Result<()> {
        let key = row.key();
        if self.rows.contains_key(&key) {
            return Err(Error::Usage(format!(
                "report already holds a row for {} {} level {} fold {} seed {}",
                row.task, row.variant, row.level, row.fold, row.seed
            )));
        }
        self.rows.insert(key, row);
        Ok(())
    }

    /// Appends every row of `other`; fails on the first duplicate.
    pub fn extend(&mut self, other: EvalReport) -> Result<()> {
        other.rows.into_values().try_for_each(|r| self.push(r))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows in canonical order: task, variant, level descending, seed, fold.
    pub fn rows(&self) -> impl Iterator<Item = &EvalRow> {
        self.rows.values()
    }

    pub fn levels(&self) -> Vec<u8> {
        let set: BTreeSet<u8> = self.rows.values().map(|r| r.level).collect();
        set.into_iter().rev().collect()
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut cells: BTreeMap<(Task, Variant, std::cmp::Reverse<u8>), Vec<&EvalRow>> = BTreeMap::new();
        for r in self.rows.values() {
            cells
                .entry((r.task, r.variant, std::cmp::Reverse(r.level)))
                .or_default()
                .push(r);
        }
        cells
            .into_iter()
            .map(|((task, variant, level), rows)| {
                let f1: Vec<f64> = rows.iter().map(|r| r.f1).collect();
                let macro_f1: Vec<f64> = rows.iter().map(|r| r.macro_f1).collect();
                let (f1_mean, f1_std) = mean_and_sample_std(&f1);
                let (macro_f1_mean, macro_f1_std) = mean_and_sample_std(&macro_f1);
                Aggregate {
                    task,
                    variant,
                    level: level.0,
                    count: rows.len(),
                    f1_mean,
                    f1_std,
                    macro_f1_mean,
                    macro_f1_std,
                }
            })
            .collect()
    }

    pub fn aggregate(&self, variant: Variant, level: u8) -> Option<Aggregate> {
        self.aggregates()
            .into_iter()
            .find(|a| a.variant == variant && a.level == level)
    }

    /// Meta line, then one line per row, then one line per aggregate.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let mut put = |line: &Line| -> Result<()> {
            out.push_str(&serde_json::to_string(line)?);
            out.push('\n');
            Ok(())
        };
        put(&Line::Meta(self.meta.clone()))?;
        for r in self.rows.values() {
            put(&Line::Row(r.clone()))?;
        }
        for a in self.aggregates() {
            put(&Line::Aggregate(a))?;
        }
        Ok(out)
    }

    /// Parses `to_jsonl` output. Stored aggregates must equal a recomputation from the rows.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut meta = None;
        let mut rows = Vec::new();
        let mut stored = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str(line).map_err(|e| Error::Format(format!("report line {}: {e}", n + 1)))? {
                Line::Meta(m) if meta.is_none() => meta = Some(m),
                Line::Meta(_) => return Err(Error::Format("report has two meta lines".into())),
                Line::Row(r) => rows.push(r),
                Line::Aggregate(a) => stored.push(a),
            }
        }
        let meta = meta.ok_or_else(|| Error::Format("report has no meta line".into()))?;
        let mut report = Self {
            meta,
            rows: BTreeMap::new(),
        };
        for r in rows {
            report.push(r)?;
        }
        if report.aggregates() != stored {
            return Err(Error::Format("stored aggregates disagree with the report rows".into()));
        }
        Ok(report)
    }

    /// Plain-text table: one line per (task, variant), one column per level,
    /// cells `mean ± std` in percent.
    pub fn to_table(&self) -> String {
        let levels = self.levels();
        let aggs = self.aggregates();
        let mut out = String::new();
        let _ = write!(out, "{:<12} {:<4}", "task", "var");
        for l in &levels {
            let _ = write!(out, " {:>14}", format!("{l}%"));
        }
        out.push('\n');
        let groups: BTreeSet<(Task, Variant)> = aggs.iter().map(|a| (a.task, a.variant)).collect();
        for (task, variant) in groups {
            let _ = write!(out, "{:<12} {:<4}", task.as_str(), variant.as_str());
            for &l in &levels {
                let cell = aggs
                    .iter()
                    .find(|a| a.task == task && a.variant == variant && a.level == l)
                    .map_or_else(
                        || "-".to_string(),
                        |a| match a.f1_std {
                            Some(s) => format!("{:.2} ± {:.2}", 100.0 * a.f1_mean, 100.0 * s),
                            None => format!("{:.2}", 100.0 * a.f1_mean),
                        },
                    );
                let _ = write!(out, " {cell:>14}");
            }
            out.push('\n');
        }
        out
    }
}

/// Paths written by [`emit_report`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmittedReport {
    pub jsonl: PathBuf,
    pub table: PathBuf,
}

/// Writes `<stem>.jsonl` and `<stem>.txt` into `dir`, creating it if needed.
pub fn emit_report(report: &EvalReport, dir: impl AsRef<Path>, stem: &str) -> Result<EmittedReport> {
    if report.is_empty() {
        return Err(Error::Usage("refusing to emit an empty report".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let paths = EmittedReport {
        jsonl: dir.join(format!("{stem}.jsonl")),
        table: dir.join(format!("{stem}.txt")),
    };
    fs::write(&paths.jsonl, report.to_jsonl()?)?;
    fs::write(&paths.table, report.to_table())?;
    Ok(paths)
}
