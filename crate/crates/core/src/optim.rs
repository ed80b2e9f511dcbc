//! Adam with bias correction, and a stepwise exponential learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    /// Step size, used when no schedule drives the learning rate.
    pub alpha: f64,
    /// First-moment decay.
    pub mu: f64,
    /// Second-moment decay.
    pub nu: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            alpha: 0.001,
            mu: 0.9,
            nu: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..1.0;
        if !unit.contains(&self.mu) || !unit.contains(&self.nu) || !(self.alpha > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Parameter(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    /// Completed steps.
    pub t: u64,
    pub m: Vec<Matrix>,
    pub n: Vec<Matrix>,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new<P: ParamSet + ?Sized>(params: &P) -> Self {
        let zeros: Vec<Matrix> = params
            .params()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        AdamState {
            t: 0,
            m: zeros.clone(),
            n: zeros,
        }
    }
}

/// One Adam update of every tensor in `params` with learning rate `lr`.
pub fn adam_step<P: ParamSet + ?Sized, G: ParamSet + ?Sized>(
    params: &mut P,
    grads: &G,
    state: &mut AdamState,
    hyper: &AdamHyper,
    lr: f64,
) -> Result<()> {
    let grads = grads.params();
    let mut params = params.params_mut();
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.n.len() {
        return Err(Error::Consistency(format!(
            "adam: {} parameter tensors, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
        if !p.same_shape(g) || !p.same_shape(&state.m[i]) || !p.same_shape(&state.n[i]) {
            return Err(Error::Consistency(format!(
                "adam: tensor {i} is {:?} but gradient is {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - hyper.mu.powi(t);
    let bias2 = 1.0 - hyper.nu.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(&grads).enumerate() {
        let m = state.m[i].as_mut_slice();
        let n = state.n[i].as_mut_slice();
        for (j, (theta, &g)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
            m[j] = hyper.mu * m[j] + (1.0 - hyper.mu) * g;
            n[j] = hyper.nu * n[j] + (1.0 - hyper.nu) * g * g;
            let m_hat = m[j] / bias1;
            let n_hat = n[j] / bias2;
            *theta -= lr * m_hat / (n_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

/// `base_lr * decay_factor^k`, where `k` counts completed decay intervals:
/// `decay_steps` long before `switch_step`, `late_decay_steps` long after.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_steps: u64,
    pub late_decay_steps: u64,
    /// `None` keeps `decay_steps` forever.
    pub switch_step: Option<u64>,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 0.01,
            decay_factor: 0.95,
            decay_steps: 1000,
            late_decay_steps: 1000,
            switch_step: None,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0)
            || self.decay_steps == 0
            || self.late_decay_steps == 0
            || !(self.base_lr > 0.0)
        {
            return Err(Error::Parameter(format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }

    pub fn intervals(&self, step: u64) -> u64 {
        match self.switch_step {
            Some(switch) if step >= switch => switch / self.decay_steps + (step - switch) / self.late_decay_steps,
            _ => step / self.decay_steps,
        }
    }
}

pub fn lr_at_step(step: u64, s: &LrSchedule) -> f64 {
    let k = s.intervals(step).min(i32::MAX as u64) as i32;
    s.base_lr * s.decay_factor.powi(k)
}
