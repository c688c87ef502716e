//! Baseline objectives: NCE, eNCE, score matching, contrastive divergence and
//! the MCMC estimate of the MLE gradient.
//!
//! Losses are minimized. Parameter gradients are assembled from
//! `∂loss/∂log p₀(xᵢ)` weights and the model's weighted backward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::dense::DenseArray;
use crate::error::{contract, Error, Result};
use crate::model::{ParamVector, UnnormalizedModel};
use crate::noise::{check_log_density, NoiseDistribution};
use crate::rng::RngStream;
use crate::sampling::{langevin_step, LangevinConfig};
use crate::special::{exp, log_sigmoid, sigmoid};
use crate::tape::Tape;

/// `τ = (θ, α)`: model parameters plus a log-partition estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct NceParams {
    pub theta: ParamVector,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    /// Noise samples per data sample.
    pub noise_ratio: usize,
    pub langevin_steps: usize,
    pub langevin_step_size: f64,
    pub batch_size: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { noise_ratio: 1, langevin_steps: 20, langevin_step_size: 0.01, batch_size: 64 }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.noise_ratio > 0, "noise_ratio must be positive");
        contract!(
            matches!(self.langevin_steps, 20 | 50 | 100),
            "langevin_steps must be one of 20, 50, 100 (got {})",
            self.langevin_steps
        );
        contract!(self.langevin_step_size > 0.0, "langevin_step_size must be positive");
        contract!(self.batch_size > 0, "batch_size must be positive");
        Ok(())
    }
}

/// Loss value and gradient of an objective over `τ = (θ, α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub grad_theta: Vec<f64>,
    /// Zero for objectives without `α`.
    pub grad_alpha: f64,
    /// Exponent clip events (eNCE only).
    pub clip_events: usize,
}

/// Shared pieces of the NCE-family losses: the log-ratio
/// `u = log p₀ − log q − α` on data and noise.
fn log_ratios<M: UnnormalizedModel + ?Sized, Q: NoiseDistribution + ?Sized>(
    model: &M,
    tau: &NceParams,
    q: &Q,
    data: &DenseArray,
    noise: &DenseArray,
) -> Result<(Vec<f64>, Vec<f64>, DenseArray)> {
    contract!(data.rows() > 0 && noise.rows() > 0, "NCE needs non-empty data and noise batches");
    model.check_batch(&tau.theta, data)?;
    model.check_batch(&tau.theta, noise)?;
    contract!(tau.alpha.is_finite(), "alpha must be finite");
    let lq_data = q.log_density_batch(data);
    let lq_noise = q.log_density_batch(noise);
    check_log_density(&lq_data)?;
    check_log_density(&lq_noise)?;
    let both = data.vstack(noise);
    let lp = model.log_unnorm(&tau.theta, &both);
    let n = data.rows();
    let u_data = (0..n).map(|i| lp[i] - lq_data[i] - tau.alpha).collect();
    let u_noise = (0..noise.rows()).map(|i| lp[n + i] - lq_noise[i] - tau.alpha).collect();
    Ok((u_data, u_noise, both))
}

/// Assembles the gradient from `∂loss/∂u` on data and noise rows.
fn finish<M: UnnormalizedModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    both: &DenseArray,
    mut weights: Vec<f64>,
    noise_weights: Vec<f64>,
    loss: f64,
    clip_events: usize,
) -> ObjectiveValue {
    weights.extend(noise_weights);
    let grad_alpha = -weights.iter().sum::<f64>();
    let grad_theta = model.weighted_grad_theta(theta, both, &weights);
    ObjectiveValue { loss, grad_theta, grad_alpha, clip_events }
}

/// Logistic NCE loss `−mean_data log h − mean_noise log(1 − h)` with
/// `h = σ(u)`.
pub fn nce_loss_and_grad<M: UnnormalizedModel + ?Sized, Q: NoiseDistribution + ?Sized>(
    model: &M,
    tau: &NceParams,
    q: &Q,
    data: &DenseArray,
    noise: &DenseArray,
) -> Result<ObjectiveValue> {
    let (ud, un, both) = log_ratios(model, tau, q, data, noise)?;
    let (nd, nn) = (ud.len() as f64, un.len() as f64);
    let loss =
        -ud.iter().map(|&u| log_sigmoid(u)).sum::<f64>() / nd - un.iter().map(|&u| log_sigmoid(-u)).sum::<f64>() / nn;
    let wd = ud.iter().map(|&u| -sigmoid(-u) / nd).collect();
    let wn = un.iter().map(|&u| sigmoid(u) / nn).collect();
    Ok(finish(model, &tau.theta, &both, wd, wn, loss, 0))
}

/// Bound on `|u/2|` inside the eNCE exponentials.
pub const ENCE_CLIP: f64 = 60.0;

/// Exponential-loss NCE: `mean_data e^{−u/2} + mean_noise e^{u/2}`.
///
/// Exponents are clamped to `±ENCE_CLIP`; a clamped term keeps the
/// derivative of the clamped exponential, so far-off points still push.
pub fn ence_loss_and_grad<M: UnnormalizedModel + ?Sized, Q: NoiseDistribution + ?Sized>(
    model: &M,
    tau: &NceParams,
    q: &Q,
    data: &DenseArray,
    noise: &DenseArray,
) -> Result<ObjectiveValue> {
    let (ud, un, both) = log_ratios(model, tau, q, data, noise)?;
    let (nd, nn) = (ud.len() as f64, un.len() as f64);
    let mut clips = 0;
    let mut clamped = |a: f64| {
        if a.abs() > ENCE_CLIP {
            clips += 1;
        }
        exp(a.clamp(-ENCE_CLIP, ENCE_CLIP))
    };
    let ed: Vec<f64> = ud.iter().map(|&u| clamped(-0.5 * u)).collect();
    let en: Vec<f64> = un.iter().map(|&u| clamped(0.5 * u)).collect();
    let loss = ed.iter().sum::<f64>() / nd + en.iter().sum::<f64>() / nn;
    let wd = ed.iter().map(|e| -0.5 * e / nd).collect();
    let wn = en.iter().map(|e| 0.5 * e / nn).collect();
    Ok(finish(model, &tau.theta, &both, wd, wn, loss, clips))
}

/// Largest input dimension with exact Hessian traces.
pub const SCORE_MATCHING_MAX_DIM: usize = 4;

/// Hyvärinen score matching `mean[½‖∇ₓ log p₀‖² + tr ∇ₓ² log p₀]`, with
/// the trace taken exactly by differentiating each score coordinate again.
pub fn score_matching_loss_and_grad<M: UnnormalizedModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    data: &DenseArray,
) -> Result<ObjectiveValue> {
    let d = model.dim();
    if d > SCORE_MATCHING_MAX_DIM {
        return Err(Error::UnsupportedDimension { dim: d, max: SCORE_MATCHING_MAX_DIM });
    }
    contract!(data.rows() > 0, "score matching needs a non-empty batch");
    model.check_batch(theta, data)?;
    let n = data.rows() as f64;
    let mut tape = Tape::new();
    let x = tape.leaf(data.clone());
    let rec = model.record(&mut tape, theta, x);
    let total = tape.sum(rec.output);
    // Rows are independent, so the gradient of the sum is the per-row score.
    let score = tape.grad_graph(total, &[x])?[0];
    let sq = tape.square(score);
    let sq_sum = tape.sum(sq);
    let mut acc = tape.scale(sq_sum, 0.5);
    for j in 0..d {
        let col = tape.column(score, j);
        let col_sum = tape.sum(col);
        let hess_row = tape.grad_graph(col_sum, &[x])?[0];
        let diag = tape.column(hess_row, j);
        let diag_sum = tape.sum(diag);
        acc = tape.add(acc, diag_sum);
    }
    let loss_var = tape.scale(acc, 1.0 / n);
    let grads = tape.grad(loss_var, &rec.params)?;
    Ok(ObjectiveValue {
        loss: tape.value(loss_var).item(),
        grad_theta: crate::model::Recorded::flatten(&grads),
        grad_alpha: 0.0,
        clip_events: 0,
    })
}

/// Gradient estimate from a positive (data) and negative (chain) phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGradient {
    pub grad: Vec<f64>,
    /// Chains that left `‖x‖ ≤ DIVERGENCE_RADIUS` and were restarted.
    pub resets: usize,
    pub negatives: DenseArray,
}

/// Chains beyond this norm count as diverged.
pub const DIVERGENCE_RADIUS: f64 = 1e6;

fn run_chains<M: UnnormalizedModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    start: &DenseArray,
    config: &LangevinConfig,
    rng: &mut RngStream,
) -> Result<(DenseArray, usize)> {
    config.validate()?;
    let mut xs = start.clone();
    let mut resets = 0;
    for _ in 0..config.steps {
        // A non-finite state is handled row by row below.
        let _ = langevin_step(model, theta, &mut xs, config, rng);
        for i in 0..xs.rows() {
            let row = xs.row(i);
            let bad = row.iter().any(|v| !v.is_finite()) || crate::special::norm(row) > DIVERGENCE_RADIUS;
            if bad {
                xs.row_mut(i).copy_from_slice(start.row(i));
                resets += 1;
            }
        }
    }
    Ok((xs, resets))
}

fn two_phase<M: UnnormalizedModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    data: &DenseArray,
    neg: &DenseArray,
) -> Vec<f64> {
    let (nd, nn) = (data.rows() as f64, neg.rows() as f64);
    let both = data.vstack(neg);
    let mut w = vec![-1.0 / nd; data.rows()];
    w.extend(core::iter::repeat_n(1.0 / nn, neg.rows()));
    model.weighted_grad_theta(theta, &both, &w)
}

/// Contrastive divergence: chains start at the data batch.
pub fn cd_grad<M: UnnormalizedModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    data: &DenseArray,
    config: &LangevinConfig,
    rng: &mut RngStream,
) -> Result<ChainGradient> {
    contract!(data.rows() > 0, "CD needs a non-empty batch");
    model.check_batch(theta, data)?;
    let (neg, resets) = run_chains(model, theta, data, config, rng)?;
    let grad = if config.steps == 0 { vec![0.0; theta.len()] } else { two_phase(model, theta, data, &neg) };
    Ok(ChainGradient { grad, resets, negatives: neg })
}

/// Persistent chain states for MCMC-MLE.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistentPool {
    pub points: DenseArray,
    /// Fraction of the pool redrawn from the init distribution per call.
    pub refresh: f64,
}

impl PersistentPool {
    /// Pool size multiple of the batch size.
    pub const SIZE_FACTOR: usize = 10;
    pub const DEFAULT_REFRESH: f64 = 0.05;

    pub fn new<Q: NoiseDistribution + ?Sized>(init: &Q, batch_size: usize, rng: &mut RngStream) -> Self {
        Self { points: init.sample(rng, Self::SIZE_FACTOR * batch_size), refresh: Self::DEFAULT_REFRESH }
    }
}

/// MCMC estimate of the MLE gradient `−mean_data ∇ log p₀ + E_{p_θ} ∇ log p₀`.
///
/// With a pool, chains start from randomly chosen pool slots (after a
/// partial refresh) and the final states are written back; without one
/// they start from fresh draws of `init`.
#[allow(clippy::too_many_arguments)]
pub fn mcmc_mle_grad<M: UnnormalizedModel + ?Sized, Q: NoiseDistribution + ?Sized>(
    model: &M,
    theta: &ParamVector,
    data: &DenseArray,
    init: &Q,
    config: &LangevinConfig,
    pool: Option<&mut PersistentPool>,
    rng: &mut RngStream,
) -> Result<ChainGradient> {
    contract!(data.rows() > 0, "MCMC-MLE needs a non-empty batch");
    model.check_batch(theta, data)?;
    let b = data.rows();
    match pool {
        Some(pool) => {
            contract!(pool.points.rows() > 0, "persistent pool is empty");
            let m = pool.points.rows();
            let fresh = (pool.refresh * m as f64) as usize;
            let idx = rng.indices(m, fresh);
            let draws = init.sample(rng, fresh);
            for (k, &i) in idx.iter().enumerate() {
                pool.points.row_mut(i).copy_from_slice(draws.row(k));
            }
            let slots = rng.indices(m, b);
            let start = pool.points.select_rows(&slots);
            let (neg, resets) = run_chains(model, theta, &start, config, rng)?;
            for (k, &i) in slots.iter().enumerate() {
                pool.points.row_mut(i).copy_from_slice(neg.row(k));
            }
            let grad = two_phase(model, theta, data, &neg);
            Ok(ChainGradient { grad, resets, negatives: neg })
        }
        None => {
            let start = init.sample(rng, b);
            let (neg, resets) = run_chains(model, theta, &start, config, rng)?;
            let grad = two_phase(model, theta, data, &neg);
            Ok(ChainGradient { grad, resets, negatives: neg })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianMeanModel;
    use crate::noise::FittedGaussian;
    use crate::special::LN_2PI;

    #[test]
    fn nce_indifference_point() {
        // θ = 0 model equals N(0,1) up to the constant ½log2π = α.
        let m = GaussianMeanModel::scalar();
        let q = FittedGaussian::isotropic(vec![0.0], 1.0).unwrap();
        let tau = NceParams { theta: m.params(&[0.0]), alpha: 0.5 * LN_2PI };
        let data = DenseArray::from_rows(&[[0.3], [-1.2]]).unwrap();
        let noise = DenseArray::from_rows(&[[2.0], [0.1]]).unwrap();
        let v = nce_loss_and_grad(&m, &tau, &q, &data, &noise).unwrap();
        assert!((v.loss - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
        assert!(v.grad_alpha.abs() < 1e-12);
    }

    #[test]
    fn ence_closed_forms() {
        let m = GaussianMeanModel::scalar();
        let q = FittedGaussian::isotropic(vec![0.0], 1.0).unwrap();
        let tau = NceParams { theta: m.params(&[0.0]), alpha: 0.5 * LN_2PI };
        let data = DenseArray::from_rows(&[[0.3]]).unwrap();
        let noise = DenseArray::from_rows(&[[2.0]]).unwrap();
        assert!((ence_loss_and_grad(&m, &tau, &q, &data, &noise).unwrap().loss - 2.0).abs() < 1e-12);
        let tau_d = NceParams { alpha: 0.5 * LN_2PI - 2.0, ..tau.clone() };
        let d = ence_loss_and_grad(&m, &tau_d, &q, &data, &noise).unwrap();
        // u = 2 on both batches: e^{−1} + e^{1}.
        assert!((d.loss - (exp(-1.0) + exp(1.0))).abs() < 1e-12);
    }

    #[test]
    fn score_matching_constant_energy_is_zero() {
        let m = crate::model::MlpEnergyModel::new(2, &[4], crate::model::Activation::Tanh);
        let th = ParamVector::zeros(m.layout().clone());
        let data = DenseArray::from_rows(&[[0.5, 1.0], [-2.0, 0.1]]).unwrap();
        let v = score_matching_loss_and_grad(&m, &th, &data).unwrap();
        assert_eq!(v.loss, 0.0);
    }

    #[test]
    fn score_matching_rejects_high_dimension() {
        let m = GaussianMeanModel::new(5);
        let th = m.params(&[0.0; 5]);
        let data = DenseArray::zeros(&[1, 5]);
        assert!(matches!(
            score_matching_loss_and_grad(&m, &th, &data),
            Err(Error::UnsupportedDimension { dim: 5, max: 4 })
        ));
    }

    #[test]
    fn cd_zero_steps_cancels() {
        let m = GaussianMeanModel::scalar();
        let th = m.params(&[1.5]);
        let data = DenseArray::from_rows(&[[0.3], [2.0]]).unwrap();
        let mut rng = RngStream::new(0, 0);
        let cfg = LangevinConfig::new(0, 0.01);
        assert_eq!(cd_grad(&m, &th, &data, &cfg, &mut rng).unwrap().grad, vec![0.0]);
    }

    #[test]
    fn baseline_config_checks_steps() {
        assert!(BaselineConfig::default().validate().is_ok());
        let bad = BaselineConfig { langevin_steps: 30, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
