//! Optimizers: MECO plus plain, normalized and Adam-style gradient steps,
//! and the step-size schedule used under the PL condition.

pub mod meco;

use alloc::vec;
use alloc::vec::Vec;

use crate::model::ParamVector;
use crate::special::{norm, sqrt};

pub use meco::{meco_estimators, meco_init, meco_step, meco_step_with_log_q, MecoConfig, MecoState, MecoStepInfo};

/// `θ ← θ − η·grad`
pub fn sgd_step(theta: &mut ParamVector, grad: &[f64], eta: f64) {
    theta.axpy(-eta, grad);
}

/// Normalized gradient descent: `θ − η·grad / max(‖grad‖, floor)`.
pub fn ngd_step(theta: &mut ParamVector, grad: &[f64], eta: f64, norm_floor: f64) {
    let n = norm(grad).max(norm_floor);
    if n > 0.0 {
        theta.axpy(-eta / n, grad);
    }
}

/// The next step size of the PL schedule: the positive root of
/// `1 − μη_t = η_t²/η_{t−1}²`, i.e. `1/η_t = μ/2 + √(μ²/4 + 1/η²_{t−1})`.
pub fn pl_next_eta(eta_prev: f64, mu: f64) -> f64 {
    let inv = 0.5 * mu + sqrt(0.25 * mu * mu + 1.0 / (eta_prev * eta_prev));
    1.0 / inv
}

/// Decreasing step sizes for a `μ`-PL objective, with
/// `γ_{t+1} = β_{t+1} = min(1, c·max(1, μ)·η_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlSchedule {
    pub mu: f64,
    pub eta0: f64,
    /// Proportionality constant `c` of the momentum coupling.
    pub coupling: f64,
    eta: f64,
}

/// Step sizes for one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl PlSchedule {
    pub fn new(mu: f64, eta0: f64, coupling: f64) -> Self {
        Self { mu, eta0, coupling, eta: eta0 }
    }

    /// Current `η_t`.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Sizes for the current iteration; momentum weights derive from the
    /// previous step size. Advances the schedule.
    pub fn next_sizes(&mut self) -> StepSizes {
        let w = (self.coupling * self.mu.max(1.0) * self.eta).min(1.0);
        let eta = pl_next_eta(self.eta, self.mu);
        self.eta = eta;
        StepSizes { eta, gamma: w, beta: w }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Adam with bias-corrected first and second moments.
pub fn adam_step(state: &mut AdamState, theta: &mut ParamVector, grad: &[f64], eta: f64, cfg: &AdamConfig) {
    assert_eq!(grad.len(), theta.len(), "gradient length mismatch");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for ((th, g), (m, v)) in theta.values_mut().iter_mut().zip(grad).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *th -= eta * mh / (sqrt(vh) + cfg.eps);
    }
}
