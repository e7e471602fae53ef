//! AdamW, global-norm gradient clipping, and the warmup + plateau schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    /// Moments shaped like `shapes`; betas and eps at the usual (0.9, 0.999, 1e-8).
    pub fn new(shapes: &[usize], lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate {lr} must be >= 0")));
        }
        Ok(Self {
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        })
    }
}

/// One AdamW update in place. Weight decay is applied to the parameters
/// directly (`p -= lr * wd * p`) before the bias-corrected Adam step.
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Dim(format!(
            "{} parameter blocks, {} gradient blocks, {} moment blocks",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[i].len() {
            return Err(Error::Dim(format!("parameter block {i} shape mismatch")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient block {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr = state.lr;
    let decay = 1.0 - lr * state.weight_decay;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] = p[k] * decay - lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::invalid(format!("max_norm {max_norm} must be > 0")));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        grads
            .iter_mut()
            .flat_map(|g| g.iter_mut())
            .for_each(|v| *v *= scale);
    }
    Ok(norm)
}

/// Linear warmup to `base_lr`, then reduce-on-plateau.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub warmup_steps: u64,
    pub base_lr: f64,
    pub plateau_factor: f64,
    pub patience: u32,
    pub best_metric: f64,
    pub steps_since_improve: u32,
    plateau_lr: f64,
    last_step: u64,
}

impl SchedulerState {
    pub fn new(base_lr: f64, warmup_steps: u64, plateau_factor: f64, patience: u32) -> Result<Self> {
        if !(plateau_factor > 0.0 && plateau_factor < 1.0) {
            return Err(Error::invalid(format!(
                "plateau factor {plateau_factor} outside (0, 1)"
            )));
        }
        Ok(Self {
            warmup_steps,
            base_lr,
            plateau_factor,
            patience,
            best_metric: f64::INFINITY,
            steps_since_improve: 0,
            plateau_lr: base_lr,
            last_step: 0,
        })
    }

    pub fn in_warmup(&self, global_step: u64) -> bool {
        global_step < self.warmup_steps
    }

    /// Learning rate for `global_step`. When `val_metric` is given after
    /// warmup it is recorded as one plateau evaluation, and the returned rate
    /// already reflects any reduction it triggered.
    pub fn step(&mut self, global_step: u64, val_metric: Option<f64>) -> f64 {
        debug_assert!(global_step >= self.last_step, "steps must not go backwards");
        self.last_step = global_step;
        if self.in_warmup(global_step) {
            return self.base_lr * global_step as f64 / self.warmup_steps as f64;
        }
        if let Some(metric) = val_metric {
            if metric < self.best_metric {
                self.best_metric = metric;
                self.steps_since_improve = 0;
            } else {
                self.steps_since_improve += 1;
                if self.steps_since_improve > self.patience {
                    self.plateau_lr *= self.plateau_factor;
                    self.steps_since_improve = 0;
                }
            }
        }
        self.plateau_lr
    }

    pub fn current_lr(&self, global_step: u64) -> f64 {
        if self.in_warmup(global_step) {
            self.base_lr * global_step as f64 / self.warmup_steps as f64
        } else {
            self.plateau_lr
        }
    }
}
