//! Unadjusted Langevin dynamics `x ← x + (ε/2)∇ₓ log p₀(x) + √ε·ξ`.
//!
//! There is no Metropolis correction, so the chain targets a slightly biased
//! version of `p_θ` whose bias shrinks with `ε`.

use crate::dense::DenseArray;
use crate::error::{contract, Error, Result};
use crate::model::{ParamVector, UnnormalizedModel};
use crate::rng::RngStream;
use crate::special::sqrt;

#[derive(Debug, Clone, PartialEq)]
pub struct LangevinConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Multiplier on the injected `√ε` noise; 0 turns the chain deterministic
    /// (test hook).
    pub noise_scale: f64,
    /// Optional `[lo, hi]` clamp applied to every coordinate after each step.
    pub clamp_box: Option<(f64, f64)>,
}

impl LangevinConfig {
    pub fn new(steps: usize, step_size: f64) -> Self {
        Self { steps, step_size, noise_scale: 1.0, clamp_box: None }
    }

    pub fn validate(&self) -> Result<()> {
        contract!(self.step_size > 0.0 && self.step_size.is_finite(), "Langevin step size must be positive");
        contract!(self.noise_scale >= 0.0, "noise scale must be non-negative");
        if let Some((lo, hi)) = self.clamp_box {
            contract!(lo < hi, "clamp box must have lo < hi");
        }
        Ok(())
    }
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self::new(100, 0.01)
    }
}

/// One update of every chain in place; returns an error if any coordinate
/// leaves the finite reals.
pub fn langevin_step<M: UnnormalizedModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    xs: &mut DenseArray,
    config: &LangevinConfig,
    rng: &mut RngStream,
) -> Result<()> {
    let g = model.grad_x(theta, xs);
    let half = 0.5 * config.step_size;
    let noise = config.noise_scale * sqrt(config.step_size);
    for (x, gi) in xs.data_mut().iter_mut().zip(g.data()) {
        let xi = if noise > 0.0 { rng.normal() } else { 0.0 };
        *x += half * gi + noise * xi;
        if let Some((lo, hi)) = config.clamp_box {
            *x = x.clamp(lo, hi);
        }
    }
    if xs.is_finite() {
        Ok(())
    } else {
        Err(Error::Input(alloc::string::String::from("non-finite Langevin state")))
    }
}

/// Runs `config.steps` updates from `x0`.
pub fn langevin_chain<M: UnnormalizedModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    x0: &DenseArray,
    config: &LangevinConfig,
    rng: &mut RngStream,
) -> Result<DenseArray> {
    config.validate()?;
    model.check_batch(theta, x0)?;
    contract!(x0.is_finite(), "Langevin start must be finite");
    let mut xs = x0.clone();
    for step in 0..config.steps {
        langevin_step(model, theta, &mut xs, config, rng).map_err(|_| Error::Divergence { step })?;
    }
    Ok(xs)
}

/// Stationary variance of the discretized chain on `f₀(x) = −x²/2`:
/// `x' = (1 − ε/2)x + √ε ξ` has variance `ε / (1 − (1 − ε/2)²)`.
pub fn quadratic_stationary_variance(step_size: f64) -> f64 {
    let a = 1.0 - 0.5 * step_size;
    step_size / (1.0 - a * a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianMeanModel;

    #[test]
    fn zero_steps_is_identity() {
        let m = GaussianMeanModel::new(2);
        let th = m.params(&[0.0, 0.0]);
        let x0 = DenseArray::from_rows(&[[1.0, -2.0]]).unwrap();
        let mut rng = RngStream::new(0, 0);
        let out = langevin_chain(&m, &th, &x0, &LangevinConfig::new(0, 0.1), &mut rng).unwrap();
        assert_eq!(out, x0);
    }

    #[test]
    fn noiseless_step_contracts_linearly() {
        let m = GaussianMeanModel::new(2);
        let th = m.params(&[0.0, 0.0]);
        let x0 = DenseArray::from_rows(&[[1.0, -2.0]]).unwrap();
        let mut cfg = LangevinConfig::new(1, 0.2);
        cfg.noise_scale = 0.0;
        let mut rng = RngStream::new(0, 0);
        let out = langevin_chain(&m, &th, &x0, &cfg, &mut rng).unwrap();
        assert_eq!(out.data(), &[0.9, -1.8]);
    }

    #[test]
    fn clamp_box_bounds_state() {
        let m = GaussianMeanModel::new(1);
        let th = m.params(&[50.0]);
        let x0 = DenseArray::from_rows(&[[0.0]]).unwrap();
        let mut cfg = LangevinConfig::new(10, 0.5);
        cfg.clamp_box = Some((-3.0, 3.0));
        let mut rng = RngStream::new(0, 0);
        let out = langevin_chain(&m, &th, &x0, &cfg, &mut rng).unwrap();
        assert!(out.data()[0] <= 3.0);
    }

    #[test]
    fn stationary_variance_formula() {
        assert!((quadratic_stationary_variance(0.05) - 0.05 / (1.0 - 0.975f64 * 0.975)).abs() < 1e-15);
    }
}
