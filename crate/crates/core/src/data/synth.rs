use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingRecord, LabelScheme, SplitTag};
use crate::error::{Error, Result};

/// Per-class train/validation fractions; the remainder becomes the test split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// How much of the class prototype survives in the text vector (0 = pure noise).
    pub rho_text: f64,
    pub rho_image: f64,
    /// Per-coordinate noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub splits: Option<SplitFractions>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need >= 2 classes, got {}", self.classes)));
        }
        if self.dim < 2 {
            return Err(Error::Config(format!("need dim >= 2, got {}", self.dim)));
        }
        if self.per_class == 0 {
            return Err(Error::Config("per_class must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        for (name, rho) in [("rho_text", self.rho_text), ("rho_image", self.rho_image)] {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {rho}")));
            }
        }
        if let Some(s) = self.splits {
            if !(s.train > 0.0 && s.val >= 0.0 && s.train + s.val < 1.0) {
                return Err(Error::Config(format!(
                    "split fractions train={} val={} leave no test data",
                    s.train, s.val
                )));
            }
        }
        Ok(())
    }
}

fn gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / n).collect()
}

fn sample(prototype: &[f64], rho: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let noisy = prototype
        .iter()
        .zip(gaussian(prototype.len(), rng))
        .map(|(p, z)| rho * p + sigma * z)
        .collect();
    unit(noisy).into_iter().map(|x| x as f32).collect()
}

/// Class-prototype embeddings for desk-scale experiments.
///
/// Every class owns one random unit-norm prototype per modality. A record's
/// modality vector is `rho · prototype + sigma · noise`, renormalized to unit
/// length. Records are emitted class by class, ids `synth-<class>-<index>`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes: Vec<(Vec<f64>, Vec<f64>)> = (0..spec.classes)
        .map(|_| {
            let text = unit(gaussian(spec.dim, &mut rng));
            let image = unit(gaussian(spec.dim, &mut rng));
            (text, image)
        })
        .collect();

    let split_bounds = spec.splits.map(|s| {
        let n = spec.per_class as f64;
        let train = (s.train * n).round() as usize;
        let val = (s.val * n).round() as usize;
        (train, (train + val).min(spec.per_class))
    });

    let mut records = Vec::with_capacity(spec.classes * spec.per_class);
    for (class, (text_proto, image_proto)) in prototypes.iter().enumerate() {
        for i in 0..spec.per_class {
            let text = sample(text_proto, spec.rho_text, spec.sigma, &mut rng);
            let image = sample(image_proto, spec.rho_image, spec.sigma, &mut rng);
            let split = split_bounds.map(|(train_end, val_end)| {
                if i < train_end {
                    SplitTag::Train
                } else if i < val_end {
                    SplitTag::Val
                } else {
                    SplitTag::Test
                }
            });
            records.push(EmbeddingRecord {
                id: format!("synth-{class}-{i:05}"),
                text: Some(text),
                image,
                label: class,
                split,
            });
        }
    }
    Dataset::new(
        format!(
            "synthetic-c{}-n{}-d{}-s{}",
            spec.classes, spec.per_class, spec.dim, spec.seed
        ),
        spec.dim,
        LabelScheme::synthetic(spec.classes),
        records,
    )
}
