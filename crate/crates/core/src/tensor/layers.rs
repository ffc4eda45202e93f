//! Forward and backward passes for the layer kinds used by the classifier:
//! fully connected, batch normalization, ReLU, inverted dropout, and
//! softmax cross-entropy.

use rand::Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// Train mode uses batch statistics and stochastic dropout; eval mode is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const DEFAULT_BN_EPS: f32 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f32 = 0.1;

/// `Y = X·W + b`, with `W` stored as `din × dout`.
pub fn linear_forward(x: &Matrix, w: &Matrix, b: &[f32]) -> Result<Matrix> {
    if b.len() != w.cols() {
        return Err(Error::dim(format!(
            "bias length {} vs {} output features",
            b.len(),
            w.cols()
        )));
    }
    let mut y = x.matmul(w)?;
    for r in 0..y.rows() {
        for (v, bias) in y.row_mut(r).iter_mut().zip(b) {
            *v += bias;
        }
    }
    Ok(y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrads {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Vec<f32>,
}

pub fn linear_backward(dy: &Matrix, x: &Matrix, w: &Matrix) -> Result<LinearGrads> {
    if dy.rows() != x.rows() || x.cols() != w.rows() || dy.cols() != w.cols() {
        return Err(Error::dim(format!(
            "linear_backward: dY {:?}, X {:?}, W {:?}",
            dy.shape(),
            x.shape(),
            w.shape()
        )));
    }
    Ok(LinearGrads {
        dx: dy.matmul_t(w)?,
        dw: x.t_matmul(dy)?,
        db: dy.column_sums(),
    })
}

/// Fully connected layer parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn zeros(din: usize, dout: usize) -> Self {
        Self {
            weight: Matrix::zeros(din, dout),
            bias: vec![0.0; dout],
        }
    }

    /// He-normal weights (std `sqrt(2/din)`), zero bias.
    pub fn he_init<R: Rng + ?Sized>(din: usize, dout: usize, rng: &mut R) -> Self {
        let std = (2.0 / din as f64).sqrt();
        let data = (0..din * dout)
            .map(|_| (rng.sample::<f64, _>(rand_distr::StandardNormal) * std) as f32)
            .collect();
        Self {
            weight: Matrix::from_parts(din, dout, data),
            bias: vec![0.0; dout],
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_features(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        linear_forward(x, &self.weight, &self.bias)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self::with_constants(features, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM)
    }

    pub fn with_constants(features: usize, eps: f32, momentum: f32) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            eps,
            momentum,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.gamma.len();
        if self.beta.len() != f || self.running_mean.len() != f || self.running_var.len() != f {
            return Err(Error::dim("batch norm vectors disagree on feature count"));
        }
        if self.running_var.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Numeric("batch norm running_var must be finite and >= 0".into()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config(format!("batch norm eps must be > 0, got {}", self.eps)));
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return Err(Error::Config(format!(
                "batch norm momentum must lie in (0, 1], got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Values saved by a batch-norm forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum BnCache {
    Train { x_hat: Matrix, inv_std: Vec<f32> },
    Eval,
}

pub fn batchnorm_forward(x: &Matrix, state: &mut BatchNormState, mode: Mode) -> Result<(Matrix, BnCache)> {
    let features = state.features();
    if x.cols() != features {
        return Err(Error::dim(format!(
            "batch norm over {features} features got {} columns",
            x.cols()
        )));
    }
    match mode {
        Mode::Eval => Ok((batchnorm_infer(x, state)?, BnCache::Eval)),
        Mode::Train => {
            let b = x.rows();
            if b < 2 {
                return Err(Error::DegenerateBatch { rows: b });
            }
            let mut mean = vec![0.0f64; features];
            for r in 0..b {
                for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                    *m += f64::from(v);
                }
            }
            mean.iter_mut().for_each(|m| *m /= b as f64);
            let mut var = vec![0.0f64; features];
            for r in 0..b {
                for ((s, &v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                    let c = f64::from(v) - m;
                    *s += c * c;
                }
            }
            var.iter_mut().for_each(|s| *s /= b as f64);

            let inv_std: Vec<f32> = var
                .iter()
                .map(|&v| (1.0 / (v + f64::from(state.eps)).sqrt()) as f32)
                .collect();
            let mut x_hat = Matrix::zeros(b, features);
            let mut y = Matrix::zeros(b, features);
            for r in 0..b {
                for j in 0..features {
                    let h = ((f64::from(x.get(r, j)) - mean[j]) as f32) * inv_std[j];
                    x_hat.set(r, j, h);
                    y.set(r, j, state.gamma[j] * h + state.beta[j]);
                }
            }

            let m = state.momentum;
            for j in 0..features {
                state.running_mean[j] = (1.0 - m) * state.running_mean[j] + m * mean[j] as f32;
                state.running_var[j] = (1.0 - m) * state.running_var[j] + m * var[j] as f32;
            }
            Ok((y, BnCache::Train { x_hat, inv_std }))
        }
    }
}

/// Eval-mode batch norm using running statistics; never mutates state.
pub fn batchnorm_infer(x: &Matrix, state: &BatchNormState) -> Result<Matrix> {
    let features = state.features();
    if x.cols() != features {
        return Err(Error::dim(format!(
            "batch norm over {features} features got {} columns",
            x.cols()
        )));
    }
    let scale: Vec<f32> = (0..features)
        .map(|j| state.gamma[j] / (state.running_var[j] + state.eps).sqrt())
        .collect();
    let mut y = x.clone();
    for r in 0..y.rows() {
        for (j, v) in y.row_mut(r).iter_mut().enumerate() {
            *v = (*v - state.running_mean[j]) * scale[j] + state.beta[j];
        }
    }
    Ok(y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnGrads {
    pub dx: Matrix,
    pub dgamma: Vec<f32>,
    pub dbeta: Vec<f32>,
    /// Column sums of `dx`, reduced before rounding to f32. Mathematically
    /// zero; this is the gradient of any bias feeding the normalization, and
    /// summing the rounded `dx` instead would leave pure rounding noise.
    pub dx_column_sums: Vec<f32>,
}

/// Backward pass of train-mode batch norm, accumulated in f64.
pub fn batchnorm_backward(dy: &Matrix, cache: &BnCache, gamma: &[f32]) -> Result<BnGrads> {
    let (x_hat, inv_std) = match cache {
        BnCache::Train { x_hat, inv_std } => (x_hat, inv_std),
        BnCache::Eval => {
            return Err(Error::Usage(
                "batch norm backward requires a train-mode forward cache".into(),
            ))
        }
    };
    if dy.shape() != x_hat.shape() || gamma.len() != x_hat.cols() {
        return Err(Error::dim(format!(
            "batchnorm_backward: dY {:?} vs cache {:?}",
            dy.shape(),
            x_hat.shape()
        )));
    }
    let (b, features) = dy.shape();
    let n = b as f64;
    let mut dx = Matrix::zeros(b, features);
    let mut dgamma = vec![0.0f32; features];
    let mut dbeta = vec![0.0f32; features];
    let mut dx_column_sums = vec![0.0f32; features];

    // dX = inv_std / B · (B·dX̂ − ΣdX̂ − X̂·Σ(dX̂⊙X̂)), with dX̂ = dY·γ.
    // X̂ is cached in f32, so its column means drift from zero by rounding;
    // re-centring in f64 keeps that drift out of ΣdX.
    let mut xh = vec![0.0f64; b];
    for j in 0..features {
        let g = f64::from(gamma[j]);
        for (r, v) in xh.iter_mut().enumerate() {
            *v = f64::from(x_hat.get(r, j));
        }
        let mean = xh.iter().sum::<f64>() / n;
        xh.iter_mut().for_each(|v| *v -= mean);
        let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
        for (r, &x) in xh.iter().enumerate() {
            let d = f64::from(dy.get(r, j));
            sum_dy += d;
            sum_dy_xhat += d * x;
        }
        dbeta[j] = sum_dy as f32;
        dgamma[j] = sum_dy_xhat as f32;
        let scale = f64::from(inv_std[j]) / n;
        let mut col_sum = 0.0f64;
        for (r, &x) in xh.iter().enumerate() {
            let dxhat = f64::from(dy.get(r, j)) * g;
            let v = scale * (n * dxhat - sum_dy * g - x * sum_dy_xhat * g);
            col_sum += v;
            dx.set(r, j, v as f32);
        }
        dx_column_sums[j] = col_sum as f32;
    }
    Ok(BnGrads {
        dx,
        dgamma,
        dbeta,
        dx_column_sums,
    })
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Gradient passes only where the forward input was strictly positive.
pub fn relu_backward(dy: &Matrix, x: &Matrix) -> Result<Matrix> {
    if dy.shape() != x.shape() {
        return Err(Error::dim(format!(
            "relu_backward: dY {:?} vs X {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let data = dy
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Matrix::from_parts(x.rows(), x.cols(), data))
}

/// Inverted dropout. The returned mask holds the per-element multiplier
/// (`0` or `1/(1-rate)` in train mode, all ones in eval mode).
pub fn dropout<R: Rng + ?Sized>(x: &Matrix, rate: f32, rng: &mut R, mode: Mode) -> Result<(Matrix, Matrix)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), Matrix::filled(x.rows(), x.cols(), 1.0)));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask_data: Vec<f32> = (0..x.data().len())
        .map(|_| if rng.random::<f32>() < rate { 0.0 } else { keep_scale })
        .collect();
    let mask = Matrix::from_parts(x.rows(), x.cols(), mask_data);
    let y = x.hadamard(&mask)?;
    Ok((y, mask))
}

pub fn dropout_backward(dy: &Matrix, mask: &Matrix) -> Result<Matrix> {
    dy.hadamard(mask)
}

/// Row-wise numerically stable softmax.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean cross-entropy over the batch and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f32, Matrix)> {
    let (b, c) = logits.shape();
    if labels.len() != b {
        return Err(Error::dim(format!("{} labels for {b} logit rows", labels.len())));
    }
    if b == 0 {
        return Err(Error::Data("cross-entropy over an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
    }
    let mut grad = Matrix::zeros(b, c);
    let mut total = 0.0f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum_exp: f64 = row.iter().map(|&v| f64::from(v - max).exp()).sum();
        let log_sum = sum_exp.ln();
        total += log_sum - f64::from(row[label] - max);
        for (j, &v) in row.iter().enumerate() {
            let p = (f64::from(v - max).exp() / sum_exp) as f32;
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad.set(r, j, (p - onehot) / b as f32);
        }
    }
    Ok(((total / b as f64) as f32, grad))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn linear_identity_and_hand_sum() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let w = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(linear_forward(&x, &w, &[0.0, 0.0]).unwrap().data(), &[1.0, 2.0]);

        let x = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let w = Matrix::from_rows(&[[2.0], [3.0]]).unwrap();
        assert_eq!(linear_forward(&x, &w, &[1.0]).unwrap().data(), &[6.0]);
    }

    #[test]
    fn linear_shape_errors() {
        let x = Matrix::zeros(2, 3);
        let w = Matrix::zeros(2, 2);
        assert!(matches!(linear_forward(&x, &w, &[0.0; 2]), Err(Error::Dimension(_))));
        let w = Matrix::zeros(3, 2);
        assert!(matches!(linear_forward(&x, &w, &[0.0; 3]), Err(Error::Dimension(_))));
        assert!(matches!(
            linear_backward(&Matrix::zeros(2, 3), &x, &w),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn linear_backward_scalar_chain_rule() {
        let g = linear_backward(
            &Matrix::from_rows(&[[1.0]]).unwrap(),
            &Matrix::from_rows(&[[2.0]]).unwrap(),
            &Matrix::from_rows(&[[3.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(g.dx.data(), &[3.0]);
        assert_eq!(g.dw.data(), &[2.0]);
        assert_eq!(g.db, vec![1.0]);

        let zero = linear_backward(
            &Matrix::zeros(2, 2),
            &Matrix::filled(2, 3, 1.5),
            &Matrix::filled(3, 2, -0.5),
        )
        .unwrap();
        assert!(zero
            .dx
            .data()
            .iter()
            .chain(zero.dw.data())
            .chain(&zero.db)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn batchnorm_two_point_standardization() {
        let x = Matrix::from_rows(&[[1.0], [3.0]]).unwrap();
        let mut st = BatchNormState::new(1);
        let (y, _) = batchnorm_forward(&x, &mut st, Mode::Train).unwrap();
        assert!((y.get(0, 0) + 1.0).abs() < 1e-4);
        assert!((y.get(1, 0) - 1.0).abs() < 1e-4);
        // running ← 0.9·running + 0.1·batch
        assert!((st.running_mean[0] - 0.2).abs() < 1e-6);
        assert!((st.running_var[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn batchnorm_eval_identity_and_no_mutation() {
        let x = Matrix::from_rows(&[[0.3, -2.0], [1.5, 4.0], [7.0, 0.0]]).unwrap();
        let mut st = BatchNormState::new(2);
        let before = st.clone();
        let (y, cache) = batchnorm_forward(&x, &mut st, Mode::Eval).unwrap();
        assert_eq!(st, before);
        assert_eq!(cache, BnCache::Eval);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn batchnorm_momentum_one_makes_eval_match_train() {
        let x = Matrix::from_rows(&[[0.3, -2.0], [1.5, 4.0], [7.0, 0.0], [-1.0, 1.0]]).unwrap();
        let mut st = BatchNormState::with_constants(2, DEFAULT_BN_EPS, 1.0);
        st.gamma = vec![1.5, 0.5];
        st.beta = vec![-0.25, 2.0];
        let (train_y, _) = batchnorm_forward(&x, &mut st, Mode::Train).unwrap();
        let eval_y = batchnorm_infer(&x, &st).unwrap();
        for (a, b) in train_y.data().iter().zip(eval_y.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn batchnorm_degenerate_batch_and_eval_backward() {
        let mut st = BatchNormState::new(3);
        assert!(matches!(
            batchnorm_forward(&Matrix::zeros(1, 3), &mut st, Mode::Train),
            Err(Error::DegenerateBatch { rows: 1 })
        ));
        assert!(matches!(
            batchnorm_backward(&Matrix::zeros(2, 3), &BnCache::Eval, &st.gamma),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn batchnorm_backward_zero_and_constant_columns() {
        let x = Matrix::from_rows(&[[0.3, -2.0], [1.5, 4.0], [7.0, 0.0]]).unwrap();
        let mut st = BatchNormState::new(2);
        st.gamma = vec![2.0, -0.7];
        let (_, cache) = batchnorm_forward(&x, &mut st, Mode::Train).unwrap();

        let g = batchnorm_backward(&Matrix::zeros(3, 2), &cache, &st.gamma).unwrap();
        assert!(g.dx.data().iter().chain(&g.dgamma).chain(&g.dbeta).all(|&v| v == 0.0));

        let dy = Matrix::from_rows(&[[1.0, -3.0], [1.0, -3.0], [1.0, -3.0]]).unwrap();
        let g = batchnorm_backward(&dy, &cache, &st.gamma).unwrap();
        assert!(g.dx.data().iter().all(|v| v.abs() < 1e-5), "{:?}", g.dx);
        assert_eq!(g.dbeta, vec![3.0, -9.0]);
    }

    #[test]
    fn relu_forward_backward_convention() {
        let x = Matrix::from_rows(&[[-1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let dy = Matrix::filled(1, 3, 5.0);
        assert_eq!(relu_backward(&dy, &x).unwrap().data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn dropout_identities_and_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(dropout(&x, 0.0, &mut rng, Mode::Train).unwrap().0, x);
        let (y, mask) = dropout(&x, 0.7, &mut rng, Mode::Eval).unwrap();
        assert_eq!(y, x);
        assert!(mask.data().iter().all(|&m| m == 1.0));
        assert!(matches!(dropout(&x, 1.0, &mut rng, Mode::Train), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Matrix::filled(1, 100_000, 1.0);
        let (y, mask) = dropout(&x, 0.5, &mut rng, Mode::Train).unwrap();
        let mean: f64 = y.data().iter().map(|&v| f64::from(v)).sum::<f64>() / 1e5;
        assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
        assert!(mask.data().iter().all(|&m| m == 0.0 || m == 2.0));
        let back = dropout_backward(&Matrix::filled(1, 100_000, 1.0), &mask).unwrap();
        assert_eq!(back, y);
    }

    #[test]
    fn cross_entropy_reference_values() {
        let (loss, _) = softmax_cross_entropy(&Matrix::from_rows(&[[0.0, 0.0]]).unwrap(), &[0]).unwrap();
        assert!((loss - std::f32::consts::LN_2).abs() < 1e-6);

        let (loss, grad) = softmax_cross_entropy(&Matrix::from_rows(&[[1000.0, 0.0]]).unwrap(), &[0]).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-6);
        assert!(grad.is_finite());

        assert!(matches!(
            softmax_cross_entropy(&Matrix::zeros(1, 2), &[2]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn cross_entropy_uniform_logits_any_label() {
        for c in 2..6 {
            for label in 0..c {
                let (loss, grad) = softmax_cross_entropy(&Matrix::filled(1, c, 3.7), &[label]).unwrap();
                assert!((loss - (c as f32).ln()).abs() < 1e-5);
                assert!(grad.row(0).iter().sum::<f32>().abs() < 1e-6);
            }
        }
    }
}
