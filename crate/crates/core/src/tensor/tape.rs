use super::layers::BnCache;
use super::Matrix;
use crate::error::{Error, Result};

/// One cached forward step.
#[derive(Clone, Debug)]
pub enum TapeEntry {
    Linear { input: Matrix },
    BatchNorm(BnCache),
    Relu { input: Matrix },
    Dropout { mask: Matrix },
}

impl TapeEntry {
    fn kind(&self) -> &'static str {
        match self {
            TapeEntry::Linear { .. } => "linear",
            TapeEntry::BatchNorm(_) => "batchnorm",
            TapeEntry::Relu { .. } => "relu",
            TapeEntry::Dropout { .. } => "dropout",
        }
    }
}

/// Caches from a single forward evaluation, replayed in reverse by backward.
///
/// A tape can be consumed once; popping from an exhausted tape is a usage error.
#[derive(Clone, Debug, Default)]
pub struct GradTape {
    entries: Vec<TapeEntry>,
    consumed: bool,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: TapeEntry) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Marks the start of a backward pass.
    pub fn begin_backward(&mut self) -> Result<()> {
        if self.consumed {
            return Err(Error::Usage(
                "gradient tape was already consumed by a backward pass".into(),
            ));
        }
        self.consumed = true;
        Ok(())
    }

    fn pop(&mut self, expected: &'static str) -> Result<TapeEntry> {
        let entry = self
            .entries
            .pop()
            .ok_or_else(|| Error::Usage(format!("tape exhausted while expecting {expected}")))?;
        if entry.kind() != expected {
            return Err(Error::Usage(format!(
                "tape order mismatch: expected {expected}, found {}",
                entry.kind()
            )));
        }
        Ok(entry)
    }

    pub fn pop_linear(&mut self) -> Result<Matrix> {
        match self.pop("linear")? {
            TapeEntry::Linear { input } => Ok(input),
            _ => unreachable!(),
        }
    }

    pub fn pop_batchnorm(&mut self) -> Result<BnCache> {
        match self.pop("batchnorm")? {
            TapeEntry::BatchNorm(cache) => Ok(cache),
            _ => unreachable!(),
        }
    }

    pub fn pop_relu(&mut self) -> Result<Matrix> {
        match self.pop("relu")? {
            TapeEntry::Relu { input } => Ok(input),
            _ => unreachable!(),
        }
    }

    pub fn pop_dropout(&mut self) -> Result<Matrix> {
        match self.pop("dropout")? {
            TapeEntry::Dropout { mask } => Ok(mask),
            _ => unreachable!(),
        }
    }
}
