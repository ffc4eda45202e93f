use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{EvalReport, EvalRow};
use super::train::{evaluate, train};
use super::{ExperimentConfig, SplitMode};
use crate::data::{availability_mask, kfold_split, to_binary_labels, Dataset, EmbeddingRecord, SplitTag, Task};
use crate::error::{Error, Result};
use crate::model::{Model, Variant};

/// Score of one model at one availability level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub level: u8,
    pub f1: f64,
    pub macro_f1: f64,
    pub text_rows: usize,
}

/// Scores `model` on `test` at every level, each under the nested stratified
/// mask drawn from `mask_seed`.
pub fn evaluate_sweep(model: &Model, test: &Dataset, levels: &[u8], mask_seed: u64) -> Result<Vec<SweepPoint>> {
    let labels = test.labels();
    let has_text: Vec<bool> = test.records().iter().map(EmbeddingRecord::has_text).collect();
    levels
        .iter()
        .map(|&level| {
            let mask = availability_mask(&labels, &has_text, level, mask_seed)?;
            let s = evaluate(model, test, Some(mask.text_present()))?;
            Ok(SweepPoint {
                level,
                f1: s.f1,
                macro_f1: s.macro_f1,
                text_rows: mask.present_count(),
            })
        })
        .collect()
}

/// Maps a dataset onto the configured task and applies optional normalization.
///
/// A binary task over a three-class harm dataset merges both harmful grades.
pub fn prepare_dataset(config: &ExperimentConfig, dataset: &Dataset) -> Result<Dataset> {
    let scheme_task = dataset.scheme().task;
    let mapped = match (config.task, scheme_task) {
        (a, b) if a == b => dataset.clone(),
        (Task::Binary, Task::Multiclass) if dataset.num_classes() == 3 => to_binary_labels(dataset)?,
        (want, have) => {
            return Err(Error::Config(format!(
                "config asks for a {want} task but the dataset is {have} with {} classes",
                dataset.num_classes()
            )))
        }
    };
    Ok(if config.l2_normalize {
        mapped.l2_normalized()
    } else {
        mapped
    })
}

/// Which part of the experiment reads substituted text.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisyScope {
    Train,
    Test,
    #[default]
    Both,
}

impl std::str::FromStr for NoisyScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(NoisyScope::Train),
            "test" => Ok(NoisyScope::Test),
            "both" => Ok(NoisyScope::Both),
            other => Err(Error::Config(format!("unknown scope `{other}` (train, test or both)"))),
        }
    }
}

/// Replaces text embeddings with those of same-id records in `noisy`.
///
/// Records absent from `noisy`, or present there without text, keep their
/// originals. Returns the new dataset and the number of substitutions.
pub fn substitute_noisy_text(dataset: &Dataset, noisy: &Dataset) -> Result<(Dataset, usize)> {
    if !noisy.is_empty() && noisy.dim() != dataset.dim() {
        return Err(Error::Data(format!(
            "noisy text has dimension {}, dataset has {}",
            noisy.dim(),
            dataset.dim()
        )));
    }
    let replacements: HashMap<&str, &Vec<f32>> = noisy
        .records()
        .iter()
        .filter_map(|r| r.text.as_ref().map(|t| (r.id.as_str(), t)))
        .collect();
    let mut count = 0;
    let records = dataset
        .records()
        .iter()
        .map(|r| match replacements.get(r.id.as_str()) {
            Some(t) => {
                count += 1;
                EmbeddingRecord {
                    text: Some((*t).clone()),
                    ..r.clone()
                }
            }
            None => r.clone(),
        })
        .collect();
    Ok((dataset.with_records(records)?, count))
}

/// Index sets for one train/evaluate cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub fold: usize,
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Resolves `Auto` against the dataset.
pub fn effective_split_mode(config: &ExperimentConfig, dataset: &Dataset) -> Result<SplitMode> {
    match config.split_mode {
        SplitMode::Auto if dataset.has_split_tags() => Ok(SplitMode::FixedSplit),
        SplitMode::Auto | SplitMode::Cv => {
            if config.folds < 3 {
                return Err(Error::Config(format!(
                    "cross-validation needs folds >= 3, got {}",
                    config.folds
                )));
            }
            Ok(SplitMode::Cv)
        }
        SplitMode::FixedSplit if !dataset.has_split_tags() => Err(Error::Config(
            "fixed-split mode needs a split tag on every record".into(),
        )),
        SplitMode::FixedSplit => Ok(SplitMode::FixedSplit),
    }
}

/// Enumerates cells seed-major. In cross-validation, fold `i` is the test set,
/// fold `(i+1) mod k` the validation set and the rest is training data; fold
/// assignment is reshuffled per seed.
pub fn plan_cells(config: &ExperimentConfig, dataset: &Dataset) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    match effective_split_mode(config, dataset)? {
        SplitMode::FixedSplit => {
            let pick = |tag| -> Vec<usize> {
                (0..dataset.len())
                    .filter(|&i| dataset.records()[i].split == Some(tag))
                    .collect()
            };
            let (train, val, test) = (pick(SplitTag::Train), pick(SplitTag::Val), pick(SplitTag::Test));
            if test.is_empty() {
                return Err(Error::Config("fixed split has no test records".into()));
            }
            for &seed in &config.seeds {
                cells.push(Cell {
                    fold: 0,
                    seed,
                    train: train.clone(),
                    val: val.clone(),
                    test: test.clone(),
                });
            }
        }
        _ => {
            let labels = dataset.labels();
            let k = config.folds;
            for &seed in &config.seeds {
                let folds = kfold_split(&labels, k, seed)?;
                for i in 0..k {
                    let test = folds[i].validation.clone();
                    let val = folds[(i + 1) % k].validation.clone();
                    let mut train: Vec<usize> = (0..k)
                        .filter(|&j| j != i && j != (i + 1) % k)
                        .flat_map(|j| folds[j].validation.iter().copied())
                        .collect();
                    train.sort_unstable();
                    cells.push(Cell {
                        fold: i,
                        seed,
                        train,
                        val,
                        test,
                    });
                }
            }
        }
    }
    Ok(cells)
}

/// Substituted text together with where it applies.
#[derive(Clone, Copy, Debug)]
pub struct NoisyText<'a> {
    /// Same records as the clean dataset, with substituted text.
    pub dataset: &'a Dataset,
    pub scope: NoisyScope,
}

fn run_cell(
    config: &ExperimentConfig,
    clean: &Dataset,
    noisy: Option<NoisyText<'_>>,
    cell: &Cell,
) -> Result<Vec<EvalRow>> {
    let source = |train_side: bool| match noisy {
        Some(n) if n.scope == NoisyScope::Both => n.dataset,
        Some(n) if (n.scope == NoisyScope::Train) == train_side => n.dataset,
        _ => clean,
    };
    let train_set = clean.with_records(source(true).subset(&cell.train))?;
    let val_set = clean.with_records(source(true).subset(&cell.val))?;
    let test_set = clean.with_records(source(false).subset(&cell.test))?;
    let outcome = train(config, &train_set, &val_set, cell.seed)?;
    log::info!(
        "{} seed {} fold {}: best epoch {} of {}",
        config.variant,
        cell.seed,
        cell.fold,
        outcome.best_epoch + 1,
        config.epochs
    );
    Ok(
        evaluate_sweep(&outcome.model, &test_set, &config.levels, config.mask_seed)?
            .into_iter()
            .map(|p| EvalRow {
                task: config.task,
                variant: config.variant,
                level: p.level,
                fold: cell.fold,
                seed: cell.seed,
                f1: p.f1,
                macro_f1: p.macro_f1,
                text_rows: p.text_rows,
            })
            .collect(),
    )
}

/// Trains and sweeps every seed × fold cell, in parallel on the current rayon pool.
pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset) -> Result<EvalReport> {
    run_experiment_with(config, dataset, None)
}

/// As [`run_experiment`], optionally reading substituted text in the given scope.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    dataset: &Dataset,
    noisy: Option<NoisyText<'_>>,
) -> Result<EvalReport> {
    config.validate()?;
    let clean = prepare_dataset(config, dataset)?;
    let noisy_prepared = match noisy {
        Some(n) => {
            let d = prepare_dataset(config, n.dataset)?;
            let same_ids = d.len() == clean.len() && d.records().iter().zip(clean.records()).all(|(a, b)| a.id == b.id);
            if !same_ids {
                return Err(Error::Data(
                    "noisy dataset must hold the same records in the same order".into(),
                ));
            }
            Some(d)
        }
        None => None,
    };
    let noisy = noisy.zip(noisy_prepared.as_ref()).map(|(n, d)| NoisyText {
        dataset: d,
        scope: n.scope,
    });
    let cells = plan_cells(config, &clean)?;
    let results: Vec<Vec<EvalRow>> = cells
        .par_iter()
        .map(|cell| run_cell(config, &clean, noisy, cell))
        .collect::<Result<_>>()?;

    let mut dataset_hash = dataset.content_hash();
    if let Some(n) = noisy {
        dataset_hash = format!(
            "{dataset_hash}+{}:{}",
            n.dataset.content_hash(),
            serde_json::to_string(&n.scope)?.trim_matches('"')
        );
    }
    let mut report = EvalReport::new(config.content_hash(), dataset_hash);
    for row in results.into_iter().flatten() {
        report.push(row)?;
    }
    Ok(report)
}

/// Runs SR and FR under one config into a single report. The `variant`
/// field of `config` is ignored.
pub fn run_ablation(config: &ExperimentConfig, dataset: &Dataset) -> Result<EvalReport> {
    let mut report = EvalReport::new(config.content_hash(), dataset.content_hash());
    for variant in [Variant::Sr, Variant::Fr] {
        report.extend(run_experiment(
            &ExperimentConfig {
                variant,
                ..config.clone()
            },
            dataset,
        )?)?;
    }
    Ok(report)
}
