use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::layers::ParamStore;
use crate::tensor::Tensor;

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Peak learning rate.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm threshold.
    pub clip: f64,
    pub warmup_fraction: f64,
    /// Final learning rate as a fraction of the peak.
    pub final_factor: f64,
    pub total_steps: usize,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-9,
            weight_decay: 0.1,
            clip: 1.0,
            warmup_fraction: 0.05,
            final_factor: 0.1,
            total_steps: 1000,
            batch_size: 16,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| Err(TrainError::Config(what.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie in (0, 1)");
        }
        if !(self.final_factor > 0.0 && self.final_factor <= 1.0) {
            return bad("final_factor must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) || !(self.clip > 0.0) || self.weight_decay < 0.0 {
            return bad("eps and clip must be > 0, weight_decay >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }
}

/// Linear warmup to the peak over the first `warmup_fraction` of steps, then
/// cosine decay to `final_factor · peak`. Steps past the end clamp.
pub fn lr_schedule(step: usize, cfg: &OptimConfig) -> f64 {
    let total = cfg.total_steps as f64;
    let floor = cfg.lr * cfg.final_factor;
    if cfg.total_steps == 0 {
        return floor;
    }
    let s = (step as f64).min(total);
    let warm = cfg.warmup_fraction * total;
    if s <= warm {
        return cfg.lr * s / warm;
    }
    let progress = (s - warm) / (total - warm);
    floor + (cfg.lr - floor) * 0.5 * (1.0 + (PI * progress).cos())
}

/// First and second moments, one pair per stored tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Updates applied so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.entries().iter().map(|e| Tensor::zeros_like(&e.value)).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One AdamW update at 1-based `step`, with the rate from [`lr_schedule`].
/// Decay is decoupled and skipped for entries marked no-decay.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &OptimConfig,
    step: usize,
) -> Result<f64, TrainError> {
    let lr = lr_schedule(step, cfg);
    adamw_update(store, grads, state, cfg, lr)?;
    Ok(lr)
}

/// AdamW with an explicit learning rate.
pub fn adamw_update(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &OptimConfig,
    lr: f64,
) -> Result<(), TrainError> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(TrainError::Config(format!(
            "{} parameters, {} gradients, {} moment slots",
            store.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (e, g) in store.entries().iter().zip(grads) {
        if e.value.shape() != g.shape() {
            return Err(TrainError::Config(format!("{}: gradient shape {:?}", e.name, g.shape())));
        }
        if !g.is_finite() {
            return Err(TrainError::NonFinite {
                step: state.t as usize + 1,
                detail: format!("gradient of {} is not finite", e.name),
                last_good: None,
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let decay = if store.entries()[i].decay { cfg.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = store.get_mut(id).data_mut();
        for (((p, m), v), g) in p.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(grads[i].data()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p *= 1.0 - lr * decay;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}
