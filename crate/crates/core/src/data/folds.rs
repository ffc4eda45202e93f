use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One cross-validation partition; indices are ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Stratified k-fold partition of record indices.
///
/// Members of each class are shuffled under `seed` and dealt round-robin, with
/// the dealing position carried across classes, so per-class counts and total
/// fold sizes each differ by at most one between folds.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Config(format!(
            "cannot split {} records into {k} folds",
            labels.len()
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut cursor = 0usize;
    for (class, mut members) in by_class {
        if members.len() < k {
            log::warn!(
                "class {class} has {} members for {k} folds; some folds will lack it",
                members.len()
            );
        }
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = cursor % k;
            cursor += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (validation, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { train, validation }
        })
        .collect())
}
