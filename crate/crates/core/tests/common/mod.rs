//! Independent f64 reference implementations shared by the integration tests.
//!
//! Nothing here calls the library's forward or backward code; parameters are
//! copied out of a `StackParams` into plain `f64` vectors and every layer is
//! recomputed from its textbook definition.

#![allow(dead_code)]

use mrsr::model::{BnPooling, ModalBatch, Model, ModelShape, StackDims, StackParams, Variant};
use mrsr::tensor::{softmax_cross_entropy, Matrix, Mode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rows = Vec<Vec<f64>>;

/// The ten parameter tensors in slot order, widened to f64.
#[derive(Clone, Debug)]
pub struct OracleStack {
    pub dims: StackDims,
    pub eps: f64,
    pub slots: Vec<Vec<f64>>,
}

impl OracleStack {
    pub fn from_params(p: &StackParams) -> Self {
        Self {
            dims: p.dims(),
            eps: f64::from(p.block1.bn.eps),
            slots: p
                .slots()
                .iter()
                .map(|s| s.iter().map(|&v| f64::from(v)).collect())
                .collect(),
        }
    }
}

pub fn widen(rows: &[&[f32]]) -> Rows {
    rows.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect()
}

/// `x · W + b` with `W` stored row-major as `din × dout`.
pub fn affine(x: &Rows, w: &[f64], b: &[f64]) -> Rows {
    let dout = b.len();
    x.iter()
        .map(|row| {
            (0..dout)
                .map(|j| b[j] + row.iter().enumerate().map(|(k, v)| v * w[k * dout + j]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Train-mode batch norm with biased batch variance.
pub fn batch_norm(z: &Rows, gamma: &[f64], beta: &[f64], eps: f64) -> Rows {
    let n = z.len() as f64;
    let cols = gamma.len();
    let mean: Vec<f64> = (0..cols).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let var: Vec<f64> = (0..cols)
        .map(|j| z.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n)
        .collect();
    z.iter()
        .map(|r| {
            (0..cols)
                .map(|j| gamma[j] * (r[j] - mean[j]) / (var[j] + eps).sqrt() + beta[j])
                .collect()
        })
        .collect()
}

/// Logits plus the smallest |pre-ReLU| value seen.
pub fn stack_forward(s: &OracleStack, x: &Rows) -> (Rows, f64) {
    let p = &s.slots;
    let mut margin = f64::INFINITY;
    let mut block = |x: &Rows, base: usize| -> Rows {
        let bn = batch_norm(&affine(x, &p[base], &p[base + 1]), &p[base + 2], &p[base + 3], s.eps);
        for v in bn.iter().flatten() {
            margin = margin.min(v.abs());
        }
        bn.into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect()
    };
    let h1 = block(x, 0);
    let h2 = block(&h1, 4);
    (affine(&h2, &p[8], &p[9]), margin)
}

pub fn mean_cross_entropy(logits: &Rows, labels: &[usize]) -> f64 {
    logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - z[y]
        })
        .sum::<f64>()
        / labels.len() as f64
}

/// One SR batch: image rows, optional text per row, labels.
#[derive(Clone, Debug)]
pub struct OracleBatch {
    pub image: Rows,
    pub text: Vec<Option<Vec<f64>>>,
    pub labels: Vec<usize>,
}

/// SR logits with pooled batch statistics: image rows followed by text rows
/// in one pass, text logits added onto their image rows.
pub fn sr_logits_pooled(s: &OracleStack, b: &OracleBatch) -> (Rows, f64) {
    let text_rows: Vec<usize> = (0..b.labels.len()).filter(|&i| b.text[i].is_some()).collect();
    let mut x = b.image.clone();
    x.extend(text_rows.iter().map(|&i| b.text[i].clone().unwrap()));
    let (all, margin) = stack_forward(s, &x);
    let n = b.labels.len();
    let mut fused: Rows = all[..n].to_vec();
    for (k, &i) in text_rows.iter().enumerate() {
        for (f, t) in fused[i].iter_mut().zip(&all[n + k]) {
            *f += t;
        }
    }
    (fused, margin)
}

/// SR logits with separate batch statistics per modality.
pub fn sr_logits_per_modality(s: &OracleStack, b: &OracleBatch) -> (Rows, f64) {
    let text_rows: Vec<usize> = (0..b.labels.len()).filter(|&i| b.text[i].is_some()).collect();
    let (mut fused, m1) = stack_forward(s, &b.image);
    if text_rows.len() < 2 {
        return (fused, m1);
    }
    let text: Rows = text_rows.iter().map(|&i| b.text[i].clone().unwrap()).collect();
    let (t, m2) = stack_forward(s, &text);
    for (k, &i) in text_rows.iter().enumerate() {
        for (f, v) in fused[i].iter_mut().zip(&t[k]) {
            *f += v;
        }
    }
    (fused, m1.min(m2))
}

/// FR logits over `[text ; image]`, zeros for absent text.
pub fn fr_logits(s: &OracleStack, b: &OracleBatch) -> (Rows, f64) {
    let d = b.image[0].len();
    let x: Rows = b
        .image
        .iter()
        .zip(&b.text)
        .map(|(img, t)| {
            let mut row = t.clone().unwrap_or_else(|| vec![0.0; d]);
            row.extend(img);
            row
        })
        .collect();
    stack_forward(s, &x)
}

/// Central differences of `loss` with respect to every parameter slot.
pub fn numeric_grads(s: &OracleStack, step: f64, loss: impl Fn(&OracleStack) -> f64) -> Vec<Vec<f64>> {
    let mut probe = s.clone();
    (0..s.slots.len())
        .map(|slot| {
            (0..s.slots[slot].len())
                .map(|i| {
                    let orig = probe.slots[slot][i];
                    probe.slots[slot][i] = orig + step;
                    let up = loss(&probe);
                    probe.slots[slot][i] = orig - step;
                    let down = loss(&probe);
                    probe.slots[slot][i] = orig;
                    (up - down) / (2.0 * step)
                })
                .collect()
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error across all slots, with the slot and index where it occurs.
pub fn max_relative_error(analytic: &[&[f32]], numeric: &[Vec<f64>]) -> (f64, usize, usize) {
    let mut worst = (0.0, 0, 0);
    for (slot, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert_eq!(a.len(), n.len(), "slot {slot} length");
        for (i, (&a, &n)) in a.iter().zip(n).enumerate() {
            let e = relative_error(f64::from(a), n);
            if e > worst.0 {
                worst = (e, slot, i);
            }
        }
    }
    worst
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn to_rows(m: &Matrix) -> Rows {
    (0..m.rows())
        .map(|r| m.row(r).iter().map(|&v| f64::from(v)).collect())
        .collect()
}

pub struct Fixture {
    pub model: Model,
    pub batch: ModalBatch,
    pub oracle_batch: OracleBatch,
}

/// Tiny model with randomized batch-norm affine parameters. Seeds are scanned
/// until every pre-ReLU value sits at least 1e-2 from the kink, so finite
/// differences never straddle it.
pub fn fixture(
    variant: Variant,
    text_mask: &[bool],
    logits: impl Fn(&OracleStack, &OracleBatch) -> (Rows, f64),
) -> Fixture {
    let (d, b) = (4, text_mask.len());
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = ModelShape {
            embed_dim: d,
            hidden1: 3,
            hidden2: 3,
            classes: 2,
            dropout_rate: 0.0,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        };
        let mut model = Model::init(variant, shape, &mut rng).unwrap();
        let stack = model.stack_mut();
        for block in [&mut stack.block1, &mut stack.block2] {
            for g in &mut block.bn.gamma {
                *g = rng.random_range(0.5..1.5);
            }
            for be in &mut block.bn.beta {
                *be = rng.random_range(-0.5..0.5);
            }
            for bias in &mut block.linear.bias {
                *bias = rng.random_range(-0.5..0.5);
            }
        }
        let image = normal_matrix(b, d, &mut rng);
        let text = normal_matrix(b, d, &mut rng);
        let labels: Vec<usize> = (0..b).map(|i| i % 2).collect();
        let batch = ModalBatch::new(
            Some(text.clone()),
            image.clone(),
            text_mask.to_vec(),
            Some(labels.clone()),
        )
        .unwrap();
        let oracle_batch = OracleBatch {
            image: to_rows(&image),
            text: to_rows(&text)
                .into_iter()
                .zip(text_mask)
                .map(|(t, &p)| p.then_some(t))
                .collect(),
            labels,
        };
        let (_, margin) = logits(&OracleStack::from_params(model.stack()), &oracle_batch);
        if margin > 1e-2 {
            return Fixture {
                model,
                batch,
                oracle_batch,
            };
        }
    }
    panic!("no seed keeps pre-activations away from zero");
}

/// Gradient check of a whole model on the fixture: returns the gap between
/// the library loss and the oracle loss, then the worst relative error with
/// its slot and index.
pub fn model_gradcheck(
    variant: Variant,
    pooling: BnPooling,
    text_mask: &[bool],
    logits: fn(&OracleStack, &OracleBatch) -> (Rows, f64),
    step: f64,
) -> (f64, (f64, usize, usize)) {
    let Fixture {
        mut model,
        batch,
        oracle_batch,
    } = fixture(variant, text_mask, logits);
    let oracle = OracleStack::from_params(model.stack());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (out, mut tape) = model.forward(&batch, Mode::Train, pooling, &mut rng).unwrap();
    let (loss, dlogits) = softmax_cross_entropy(&out, batch.labels().unwrap()).unwrap();
    let grads = model.backward(&mut tape, &dlogits).unwrap();

    let oracle_loss = |s: &OracleStack| mean_cross_entropy(&logits(s, &oracle_batch).0, &oracle_batch.labels);
    let gap = (f64::from(loss) - oracle_loss(&oracle)).abs();
    let numeric = numeric_grads(&oracle, step, oracle_loss);
    (gap, max_relative_error(&grads.slots(), &numeric))
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Per-class F1 from directly counted outcomes. Precision and recall are kept
/// as exact fractions and combined as `2pr / (p + r)` before a single
/// conversion to f64.
pub fn oracle_class_f1(preds: &[usize], labels: &[usize], class: usize) -> f64 {
    let count = |f: &dyn Fn(usize, usize) -> bool| preds.iter().zip(labels).filter(|&(&p, &l)| f(p, l)).count() as u128;
    let tp = count(&|p, l| p == class && l == class);
    let predicted = count(&|p, _| p == class);
    let actual = count(&|_, l| l == class);
    if tp == 0 {
        return 0.0;
    }
    // p = tp/predicted, r = tp/actual; 2pr/(p+r) = 2·tp·tp / (tp·actual + tp·predicted).
    let num = 2 * tp * tp;
    let den = tp * actual + tp * predicted;
    let g = gcd(num, den);
    (num / g) as f64 / (den / g) as f64
}

/// Mean of the oracle per-class F1 values, summed in class order.
pub fn oracle_macro_f1(preds: &[usize], labels: &[usize], classes: usize) -> f64 {
    (0..classes).map(|c| oracle_class_f1(preds, labels, c)).sum::<f64>() / classes as f64
}
