//! Embedding datasets: records, label schemes, the on-disk manifest/store
//! pair, stratified folds, text-availability masks, and a synthetic generator.

mod folds;
mod mask;
mod store;
mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use folds::{kfold_split, Fold};
pub use mask::{
    apply_availability_mask, availability_mask, stratified_keep_counts, AvailabilityMask, AVAILABILITY_LEVELS,
};
pub use store::{load_dataset, read_store, write_dataset, write_store, Manifest, ManifestRecord, STORE_MAGIC};
pub use synth::{synth_generate, SplitFractions, SynthSpec};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multiclass,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Multiclass => "multiclass",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    pub task: Task,
    pub class_names: Vec<String>,
}

impl LabelScheme {
    /// `not harmful = 0`, `harmful = 1`.
    pub fn binary() -> Self {
        Self {
            task: Task::Binary,
            class_names: vec!["not harmful".into(), "harmful".into()],
        }
    }

    /// `not harmful = 0`, `somewhat harmful = 1`, `very harmful = 2`.
    pub fn multiclass() -> Self {
        Self {
            task: Task::Multiclass,
            class_names: vec!["not harmful".into(), "somewhat harmful".into(), "very harmful".into()],
        }
    }

    /// Generic names for generated data; two classes form a binary task.
    pub fn synthetic(classes: usize) -> Self {
        Self {
            task: if classes == 2 { Task::Binary } else { Task::Multiclass },
            class_names: (0..classes).map(|c| format!("class_{c}")).collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub text: Option<Vec<f32>>,
    pub image: Vec<f32>,
    pub label: usize,
    pub split: Option<SplitTag>,
}

impl EmbeddingRecord {
    pub fn has_text(&self) -> bool {
        self.text.is_some()
    }
}

/// A validated, immutable collection of records sharing one embedding dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    scheme: LabelScheme,
    records: Vec<EmbeddingRecord>,
}

fn check_vector(id: &str, what: &str, v: &[f32], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Load {
            id: id.to_string(),
            reason: format!("{what} embedding has length {}, expected {dim}", v.len()),
        });
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Load {
            id: id.to_string(),
            reason: format!("{what} embedding has non-finite value at index {i}"),
        });
    }
    Ok(())
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        scheme: LabelScheme,
        records: Vec<EmbeddingRecord>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("embedding dimension must be positive".into()));
        }
        if scheme.num_classes() < 2 {
            return Err(Error::Data("label scheme needs at least 2 classes".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Load {
                    id: r.id.clone(),
                    reason: "duplicate record id".into(),
                });
            }
            check_vector(&r.id, "image", &r.image, dim)?;
            if let Some(t) = &r.text {
                check_vector(&r.id, "text", t, dim)?;
            }
            if r.label >= scheme.num_classes() {
                return Err(Error::Load {
                    id: r.id.clone(),
                    reason: format!("label {} outside the {}-class scheme", r.label, scheme.num_classes()),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            scheme,
            records,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn num_classes(&self) -> usize {
        self.scheme.num_classes()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn has_split_tags(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.split.is_some())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    /// Records with the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Vec<EmbeddingRecord> {
        indices.iter().map(|&i| self.records[i].clone()).collect()
    }

    pub fn with_split(&self, tag: SplitTag) -> Vec<EmbeddingRecord> {
        self.records.iter().filter(|r| r.split == Some(tag)).cloned().collect()
    }

    /// Copy with every embedding scaled to unit L2 norm (zero vectors untouched).
    pub fn l2_normalized(&self) -> Self {
        let norm = |v: &mut Vec<f32>| {
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
            }
        };
        let mut out = self.clone();
        for r in &mut out.records {
            norm(&mut r.image);
            if let Some(t) = &mut r.text {
                norm(t);
            }
        }
        out
    }

    /// Same records under new labels and scheme; revalidated.
    pub fn relabeled(&self, labels: Vec<usize>, scheme: LabelScheme) -> Result<Self> {
        if labels.len() != self.records.len() {
            return Err(Error::dim("relabel: label count mismatch"));
        }
        let records = self
            .records
            .iter()
            .zip(labels)
            .map(|(r, label)| EmbeddingRecord { label, ..r.clone() })
            .collect();
        Self::new(self.name.clone(), self.dim, scheme, records)
    }

    pub fn with_records(&self, records: Vec<EmbeddingRecord>) -> Result<Self> {
        Self::new(self.name.clone(), self.dim, self.scheme.clone(), records)
    }

    /// SHA-256 over a canonical byte encoding of the whole dataset.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        h.update([0]);
        h.update((self.dim as u64).to_le_bytes());
        h.update(self.scheme.task.as_str().as_bytes());
        for name in &self.scheme.class_names {
            h.update(name.as_bytes());
            h.update([0]);
        }
        for r in &self.records {
            h.update(r.id.as_bytes());
            h.update([0]);
            h.update((r.label as u64).to_le_bytes());
            h.update([match r.split {
                None => 0,
                Some(SplitTag::Train) => 1,
                Some(SplitTag::Val) => 2,
                Some(SplitTag::Test) => 3,
            }]);
            h.update([u8::from(r.text.is_some())]);
            for v in r.text.iter().flatten().chain(&r.image) {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Merges `somewhat harmful` (1) and `very harmful` (2) into `harmful` (1).
pub fn to_binary_labels(dataset: &Dataset) -> Result<Dataset> {
    let labels = dataset
        .records()
        .iter()
        .map(|r| match r.label {
            0 => Ok(0),
            1 | 2 => Ok(1),
            other => Err(Error::Data(format!(
                "record `{}` has label {other}, not in the 3-class harm scheme",
                r.id
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    dataset.relabeled(labels, LabelScheme::binary())
}
