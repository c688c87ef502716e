//! MECO: momentum estimators for the inner expectation and the gradient.
//!
//! With `g(θ) = E_q[p₀(z̃; θ)/q(z̃)]` the MLE loss is
//! `−mean log p₀(z) + log g(θ)`. Each step
//!
//! ```text
//! u ← (1−γ)u + γ·mean_noise p₀(z̃)/q(z̃)
//! v ← (1−β)v + β·[−mean_data ∇log p₀(z) + mean_noise (p₀(z̃)/q(z̃)/u)·∇log p₀(z̃)]
//! θ ← θ − η v
//! ```
//!
//! `u` is kept as `log u` so that partition functions like `e^{129}` and
//! tiny ratios stay representable.

use alloc::vec;
use alloc::vec::Vec;

use crate::dense::DenseArray;
use crate::error::{contract, Result};
use crate::model::{ParamVector, UnnormalizedModel};
use crate::noise::{check_log_density, NoiseDistribution};
use crate::special::{exp, log, log_mean_exp, logaddexp, norm};

#[derive(Debug, Clone, PartialEq)]
pub struct MecoConfig {
    pub gamma: f64,
    pub beta: f64,
    pub eta: f64,
    /// Floor for `log u`.
    pub u_min_log: f64,
    pub batch_data: usize,
    pub batch_noise: usize,
}

impl Default for MecoConfig {
    fn default() -> Self {
        Self { gamma: 0.1, beta: 0.9, eta: 1e-3, u_min_log: log(1e-8), batch_data: 64, batch_noise: 64 }
    }
}

impl MecoConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.gamma > 0.0 && self.gamma <= 1.0, "gamma must lie in (0, 1]");
        contract!(self.beta > 0.0 && self.beta <= 1.0, "beta must lie in (0, 1]");
        contract!(self.eta > 0.0 && self.eta.is_finite(), "eta must be positive");
        contract!(self.batch_data > 0 && self.batch_noise > 0, "batch sizes must be positive");
        Ok(())
    }
}

/// `(log u_t, v_t, t)`; `t = 0` marks a fresh state whose first step
/// overwrites both estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct MecoState {
    pub log_u: f64,
    pub v: Vec<f64>,
    pub t: u64,
    pub clip_events: u64,
}

impl MecoState {
    pub fn fresh(num_params: usize) -> Self {
        Self { log_u: f64::NEG_INFINITY, v: vec![0.0; num_params], t: 0, clip_events: 0 }
    }
}

/// Per-step quantities for traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MecoStepInfo {
    /// `log mean_noise p₀/q` of this batch.
    pub batch_log_ratio: f64,
    pub log_u: f64,
    pub v_norm: f64,
    /// Data term `−mean log p₀(z)` plus `log u`, a running estimate of the loss.
    pub loss_proxy: f64,
}

/// Updates `u` and `v` in place from one batch without moving θ; the caller
/// applies its own step along `state.v`.
#[allow(clippy::too_many_arguments)]
pub fn meco_estimators<M: UnnormalizedModel + ?Sized>(
    state: &mut MecoState,
    model: &M,
    theta: &ParamVector,
    data: &DenseArray,
    noise: &DenseArray,
    noise_log_q: &[f64],
    gamma: f64,
    beta: f64,
    u_min_log: f64,
) -> Result<MecoStepInfo> {
    contract!(data.rows() > 0 && noise.rows() > 0, "MECO needs non-empty data and noise batches");
    contract!(noise_log_q.len() == noise.rows(), "one noise log-density per noise row");
    model.check_batch(theta, data)?;
    model.check_batch(theta, noise)?;
    check_log_density(noise_log_q)?;

    let (gamma, beta) = if state.t == 0 { (1.0, 1.0) } else { (gamma, beta) };
    let both = data.vstack(noise);
    let lp = model.log_unnorm(theta, &both);
    let nd = data.rows();
    let log_r: Vec<f64> = lp[nd..].iter().zip(noise_log_q).map(|(a, b)| a - b).collect();
    let batch_log_ratio = log_mean_exp(&log_r);

    let mut log_u = if gamma >= 1.0 {
        batch_log_ratio
    } else {
        logaddexp(log(1.0 - gamma) + state.log_u, log(gamma) + batch_log_ratio)
    };
    if !(log_u >= u_min_log) {
        log_u = u_min_log;
        state.clip_events += 1;
    }

    let nn = noise.rows() as f64;
    let mut w = vec![-1.0 / nd as f64; nd];
    w.extend(log_r.iter().map(|lr| exp(lr - log_u) / nn));
    let fresh = model.weighted_grad_theta(theta, &both, &w);
    if beta >= 1.0 {
        state.v = fresh;
    } else {
        for (v, g) in state.v.iter_mut().zip(&fresh) {
            *v = (1.0 - beta) * *v + beta * g;
        }
    }
    state.log_u = log_u;
    state.t += 1;
    let data_term = -lp[..nd].iter().sum::<f64>() / nd as f64;
    Ok(MecoStepInfo { batch_log_ratio, log_u, v_norm: norm(&state.v), loss_proxy: data_term + log_u })
}

/// The first-iteration estimators at `θ₁`: `u₁` is the batch mean ratio and
/// `v₁` the matching gradient estimate.
pub fn meco_init<M: UnnormalizedModel + ?Sized, Q: NoiseDistribution + ?Sized>(
    model: &M,
    theta: &ParamVector,
    q: &Q,
    data: &DenseArray,
    noise: &DenseArray,
) -> Result<MecoState> {
    let lq = q.log_density_batch(noise);
    let mut state = MecoState::fresh(theta.len());
    meco_estimators(&mut state, model, theta, data, noise, &lq, 1.0, 1.0, f64::NEG_INFINITY)?;
    Ok(state)
}

/// One MECO iteration: update `u`, then `v`, then `θ ← θ − η v`.
pub fn meco_step<M: UnnormalizedModel + ?Sized, Q: NoiseDistribution + ?Sized>(
    state: &mut MecoState,
    model: &M,
    theta: &mut ParamVector,
    q: &Q,
    data: &DenseArray,
    noise: &DenseArray,
    config: &MecoConfig,
) -> Result<MecoStepInfo> {
    let lq = q.log_density_batch(noise);
    meco_step_with_log_q(state, model, theta, data, noise, &lq, config)
}

/// [`meco_step`] with precomputed noise log-densities (for noise whose
/// density is approximated per batch).
pub fn meco_step_with_log_q<M: UnnormalizedModel + ?Sized>(
    state: &mut MecoState,
    model: &M,
    theta: &mut ParamVector,
    data: &DenseArray,
    noise: &DenseArray,
    noise_log_q: &[f64],
    config: &MecoConfig,
) -> Result<MecoStepInfo> {
    config.validate()?;
    let info =
        meco_estimators(state, model, theta, data, noise, noise_log_q, config.gamma, config.beta, config.u_min_log)?;
    theta.axpy(-config.eta, &state.v);
    Ok(info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianMeanModel;
    use crate::noise::{FittedGaussian, ModelGaussianNoise};

    #[test]
    fn single_sample_init_is_the_ratio() {
        let m = GaussianMeanModel::scalar();
        let th = m.params(&[0.7]);
        let q = FittedGaussian::isotropic(vec![0.0], 1.0).unwrap();
        let data = DenseArray::from_rows(&[[1.0]]).unwrap();
        let noise = DenseArray::from_rows(&[[-0.4]]).unwrap();
        let s = meco_init(&m, &th, &q, &data, &noise).unwrap();
        let want = m.log_unnorm_point(&th, &[-0.4]) - q.log_density(&[-0.4]);
        assert_eq!(s.log_u, want);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn exact_noise_gives_partition_function() {
        let m = GaussianMeanModel::scalar();
        let th = m.params(&[1.3]);
        let q = ModelGaussianNoise::new(&[1.3]);
        let data = DenseArray::from_rows(&[[1.0]]).unwrap();
        let noise = DenseArray::from_rows(&[[-0.4], [2.0], [5.0]]).unwrap();
        let s = meco_init(&m, &th, &q, &data, &noise).unwrap();
        assert!((s.log_u - m.log_partition(&th)).abs() < 1e-12);
    }

    #[test]
    fn floor_counts_clip_events() {
        let m = GaussianMeanModel::scalar();
        let mut th = m.params(&[0.0]);
        let q = FittedGaussian::isotropic(vec![0.0], 1.0).unwrap();
        let data = DenseArray::from_rows(&[[0.0]]).unwrap();
        let noise = DenseArray::from_rows(&[[0.0]]).unwrap();
        let mut st = MecoState::fresh(1);
        let cfg = MecoConfig { u_min_log: 10.0, ..MecoConfig::default() };
        meco_step(&mut st, &m, &mut th, &q, &data, &noise, &cfg).unwrap();
        assert_eq!(st.log_u, 10.0);
        assert_eq!(st.clip_events, 1);
    }
}
