//! AdamW with a cosine-annealed step multiplier.
//!
//! Update for every trainable parameter at step `t` (1-based after increment):
//!
//! ```text
//! m <- b1 m + (1 - b1) g          m_hat = m / (1 - b1^t)
//! v <- b2 v + (1 - b2) g^2        v_hat = v / (1 - b2^t)
//! theta <- theta - eta(t-1) * (lr * m_hat / (sqrt(v_hat) + eps) + wd * theta)
//! ```
//!
//! where `eta` is the cosine schedule multiplier.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::layers::{GeneratorParams, Gradients};
use crate::error::{shape, validation, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CosineSchedule {
    pub eta_max: f64,
    pub eta_min: f64,
    /// Steps over which the multiplier anneals from `eta_max` to `eta_min`.
    pub period: u64,
}

impl Default for CosineSchedule {
    fn default() -> Self {
        Self {
            eta_max: 1.0,
            eta_min: 0.0,
            period: 1,
        }
    }
}

/// `eta_min + (eta_max - eta_min) (1 + cos(pi t / T)) / 2`, clamped to
/// `eta_min` once `t` passes the period.
pub fn cosine_lr(step: u64, sched: &CosineSchedule) -> f64 {
    if sched.period == 0 || step >= sched.period {
        return sched.eta_min;
    }
    let frac = step as f64 / sched.period as f64;
    sched.eta_min + 0.5 * (sched.eta_max - sched.eta_min) * (1.0 + (PI * frac).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: CosineSchedule,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            schedule: CosineSchedule::default(),
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.lr.is_finite()
            && self.schedule.eta_min <= self.schedule.eta_max;
        if ok {
            Ok(())
        } else {
            Err(validation(format!("invalid AdamW configuration {self:?}")))
        }
    }
}

/// First and second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamWState {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// Applies one AdamW update in place.
pub fn adamw_step(
    params: &mut GeneratorParams,
    grads: &Gradients,
    cfg: &AdamWConfig,
) -> Result<()> {
    let n = params.trainable_len();
    if grads.0.len() != n || params.optim.m.len() != n || params.optim.v.len() != n {
        return Err(shape(format!(
            "gradient has {} entries, parameters {n}, moments {}",
            grads.0.len(),
            params.optim.m.len()
        )));
    }
    if let Some(i) = grads.0.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient at parameter {i}"
        )));
    }
    let eta = cosine_lr(params.optim.step, &cfg.schedule);
    params.optim.step += 1;
    let t = params.optim.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let mut state = std::mem::take(&mut params.optim);
    let mut offset = 0;
    for slice in params.trainable_slices_mut() {
        for theta in slice.iter_mut() {
            let g = grads.0[offset];
            let m = &mut state.m[offset];
            let v = &mut state.v[offset];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= eta * (cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *theta);
            offset += 1;
        }
    }
    params.optim = state;
    params.version += 1;
    Ok(())
}
