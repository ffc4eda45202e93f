use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EmbeddingRecord;
use crate::error::{Error, Result};

/// Text-availability levels evaluated by the sweep, in percent.
pub const AVAILABILITY_LEVELS: [u8; 7] = [100, 90, 70, 50, 30, 10, 0];

/// Which test records keep their text at one availability level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AvailabilityMask {
    level: u8,
    seed: u64,
    text_present: Vec<bool>,
}

impl AvailabilityMask {
    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Flags aligned with the records the mask was built from.
    pub fn text_present(&self) -> &[bool] {
        &self.text_present
    }

    pub fn present_count(&self) -> usize {
        self.text_present.iter().filter(|&&p| p).count()
    }
}

/// Per-class keep counts: `floor(level·n_c/100)` plus largest-remainder
/// top-ups (ties to the lower class index) so the total is `round(level·N/100)`.
pub fn stratified_keep_counts(class_sizes: &[usize], level: u8) -> Vec<usize> {
    let level = usize::from(level.min(100));
    let total: usize = class_sizes.iter().sum();
    let target = (level * total + 50) / 100;
    let mut counts: Vec<usize> = class_sizes.iter().map(|&n| level * n / 100).collect();
    let mut deficit = target - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(level * class_sizes[c] % 100));
    for c in order {
        if deficit == 0 {
            break;
        }
        if !(level * class_sizes[c]).is_multiple_of(100) {
            counts[c] += 1;
            deficit -= 1;
        }
    }
    counts
}

/// Builds a stratified, nested text-availability mask.
///
/// Each class gets a random ranking drawn from `seed` alone (never from the
/// level) with text-bearing records ranked first; the top `q_c` are kept. Masks
/// for one seed are therefore nested across levels whenever the keep counts are
/// monotone in the level, which holds for classes of at least 10 records on the
/// standard 10-point level grid. Records without stored text are never present.
pub fn availability_mask(labels: &[usize], has_text: &[bool], level: u8, seed: u64) -> Result<AvailabilityMask> {
    if !AVAILABILITY_LEVELS.contains(&level) {
        return Err(Error::Config(format!(
            "availability level {level} is not one of {AVAILABILITY_LEVELS:?}"
        )));
    }
    if labels.len() != has_text.len() {
        return Err(Error::dim("labels and text flags differ in length"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
    let keep = stratified_keep_counts(&sizes, level);

    let mut text_present = vec![false; labels.len()];
    for ((&class, members), &q) in by_class.iter().zip(&keep) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        let (mut ranked, rest): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| has_text[i]);
        ranked.shuffle(&mut rng);
        ranked.extend(rest);
        for &i in ranked.iter().take(q) {
            text_present[i] = has_text[i];
        }
    }
    Ok(AvailabilityMask {
        level,
        seed,
        text_present,
    })
}

pub fn apply_availability_mask(records: &[EmbeddingRecord], level: u8, seed: u64) -> Result<AvailabilityMask> {
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let has_text: Vec<bool> = records.iter().map(EmbeddingRecord::has_text).collect();
    availability_mask(&labels, &has_text, level, seed)
}
