//! AdamW with decoupled weight decay, linear warmup / linear decay schedule,
//! and gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub final_frac: f64,
}

impl ScheduleSpec {
    pub fn new(base_lr: f64, total_steps: usize, warmup_frac: f64, final_frac: f64) -> Result<Self> {
        let spec = Self {
            base_lr,
            total_steps,
            warmup_frac,
            final_frac,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(Error::Config(format!(
                "warmup_frac must lie in (0, 1), got {}",
                self.warmup_frac
            )));
        }
        if !(self.final_frac > 0.0 && self.final_frac <= 1.0) {
            return Err(Error::Config(format!(
                "final_frac must lie in (0, 1], got {}",
                self.final_frac
            )));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_frac * self.total_steps as f64).round() as usize
    }
}

/// Learning rate applied at 0-based `step`.
///
/// Warmup ramps `base·(step+1)/warmup` up to `base`; afterwards the rate falls
/// linearly from `base` at `warmup` to `final_frac·base` at `total_steps`.
pub fn lr_at(spec: &ScheduleSpec, step: usize) -> Result<f64> {
    if step > spec.total_steps {
        return Err(Error::Usage(format!(
            "step {step} is past the schedule end {}",
            spec.total_steps
        )));
    }
    let warmup = spec.warmup_steps();
    let end_lr = spec.final_frac * spec.base_lr;
    if step < warmup {
        return Ok(spec.base_lr * (step + 1) as f64 / warmup as f64);
    }
    let span = spec.total_steps - warmup;
    if span == 0 {
        return Ok(end_lr);
    }
    let t = (step - warmup) as f64 / span as f64;
    Ok(spec.base_lr * (1.0 - t) + end_lr * t)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    /// Rescale all gradients jointly so the concatenated L2 norm is at most the threshold.
    #[default]
    Norm,
    /// Clamp each gradient entry into `[-threshold, threshold]`.
    Value,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipReport {
    /// Global L2 norm before clipping.
    pub norm: f64,
    pub clipped: bool,
}

pub fn global_norm(grads: &[&[f32]]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

fn check_finite(grads: &[&mut [f32]]) -> Result<()> {
    for (slot, g) in grads.iter().enumerate() {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient {} in slot {slot} at index {i}",
                g[i]
            )));
        }
    }
    Ok(())
}

pub fn clip_global_norm(grads: &mut [&mut [f32]], max_norm: f64) -> Result<ClipReport> {
    if max_norm.is_nan() || max_norm <= 0.0 {
        return Err(Error::Config(format!("max_norm must be > 0, got {max_norm}")));
    }
    check_finite(grads)?;
    let norm = {
        let views: Vec<&[f32]> = grads.iter().map(|g| &**g).collect();
        global_norm(&views)
    };
    if norm <= max_norm {
        return Ok(ClipReport { norm, clipped: false });
    }
    let scale = (max_norm / norm) as f32;
    for g in grads.iter_mut() {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(ClipReport { norm, clipped: true })
}

pub fn clip_value(grads: &mut [&mut [f32]], max_abs: f64) -> Result<ClipReport> {
    if max_abs.is_nan() || max_abs <= 0.0 {
        return Err(Error::Config(format!("clip threshold must be > 0, got {max_abs}")));
    }
    check_finite(grads)?;
    let norm = {
        let views: Vec<&[f32]> = grads.iter().map(|g| &**g).collect();
        global_norm(&views)
    };
    let limit = max_abs as f32;
    let mut clipped = false;
    for g in grads.iter_mut() {
        for v in g.iter_mut() {
            if v.abs() > limit {
                *v = v.signum() * limit;
                clipped = true;
            }
        }
    }
    Ok(ClipReport { norm, clipped })
}

pub fn clip(grads: &mut [&mut [f32]], mode: ClipMode, threshold: f64) -> Result<ClipReport> {
    match mode {
        ClipMode::Norm => clip_global_norm(grads, threshold),
        ClipMode::Value => clip_value(grads, threshold),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates for each parameter slot.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub config: AdamWConfig,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, slot_lengths: &[usize]) -> Self {
        Self {
            step: 0,
            config,
            m: slot_lengths.iter().map(|&n| vec![0.0; n]).collect(),
            v: slot_lengths.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One parameter tensor, its gradient, and whether decoupled decay applies.
pub struct ParamGroup<'a> {
    pub values: &'a mut [f32],
    pub grads: &'a [f32],
    pub decay: bool,
}

pub fn adamw_step(groups: &mut [ParamGroup<'_>], state: &mut AdamWState, lr: f64) -> Result<()> {
    if groups.len() != state.m.len() {
        return Err(Error::dim(format!(
            "{} parameter groups for {} optimizer slots",
            groups.len(),
            state.m.len()
        )));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.values.len() != g.grads.len() || g.values.len() != state.m[i].len() {
            return Err(Error::dim(format!(
                "slot {i}: {} values, {} grads, {} moments",
                g.values.len(),
                g.grads.len(),
                state.m[i].len()
            )));
        }
    }
    state.step += 1;
    let AdamWConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (i, group) in groups.iter_mut().enumerate() {
        let decay = if group.decay { weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, p) in group.values.iter_mut().enumerate() {
            let g = f64::from(group.grads[j]);
            let mj = beta1 * f64::from(m[j]) + (1.0 - beta1) * g;
            let vj = beta2 * f64::from(v[j]) + (1.0 - beta2) * g * g;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            let pv = f64::from(*p);
            *p = (pv - lr * (m_hat / (v_hat.sqrt() + eps) + decay * pv)) as f32;
        }
    }
    Ok(())
}
