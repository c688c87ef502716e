//! Loss landscapes of MLE, NCE and eNCE on the Gaussian mean problem along
//! `τ(θ) = (θ, θ²/2 + log √(2π))`, the path on which `α` equals the true
//! log-partition.
//!
//! All grid points reuse one set of data and noise draws (common random
//! numbers), so differences between neighbouring θ are not masked by
//! resampling noise.

use meco_core::model::{log_partition_gaussian, mle_gap_gaussian};
use meco_core::special::{exp, log_sigmoid, HALF_LN_2PI};
use meco_core::RngStream;
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, LandscapeConfig};
use crate::error::{HarnessError, Result};
use crate::io::{create_dir, write_rows};
use crate::report::write_summary;

const LANDSCAPE_STREAM: u64 = 0x1A4D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LandscapeRow {
    pub theta: f64,
    pub mle_gap: f64,
    pub nce: f64,
    pub nce_se: f64,
    pub ence: f64,
    pub ence_se: f64,
}

/// Shared Monte-Carlo draws: data from `N(θ*, 1)`, noise from `N(θ_q, 1)`.
pub struct Draws {
    data: Vec<f64>,
    noise: Vec<f64>,
    theta_q: f64,
}

impl Draws {
    pub fn new(theta_star: f64, theta_q: f64, n_mc: usize, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, LANDSCAPE_STREAM);
        let data = (0..n_mc).map(|_| theta_star + rng.normal()).collect();
        let noise = (0..n_mc).map(|_| theta_q + rng.normal()).collect();
        Self { data, noise, theta_q }
    }

    /// `u = log p₀(x; θ) − α − log q(x)` at `τ(θ)`.
    fn u(&self, theta: f64, x: f64) -> f64 {
        let log_p0 = theta * x - 0.5 * x * x;
        let log_q = -0.5 * (x - self.theta_q).powi(2) - HALF_LN_2PI;
        log_p0 - log_partition_gaussian(theta) - log_q
    }

    /// Per-sample NCE terms on data and noise.
    fn nce_terms(&self, theta: f64) -> (Vec<f64>, Vec<f64>) {
        let a = self.data.iter().map(|&x| -log_sigmoid(self.u(theta, x))).collect();
        let b = self.noise.iter().map(|&x| -log_sigmoid(-self.u(theta, x))).collect();
        (a, b)
    }

    fn ence_terms(&self, theta: f64) -> (Vec<f64>, Vec<f64>) {
        let a = self.data.iter().map(|&x| exp(-0.5 * self.u(theta, x))).collect();
        let b = self.noise.iter().map(|&x| exp(0.5 * self.u(theta, x))).collect();
        (a, b)
    }

    /// NCE loss at `τ(θ)` with its standard error.
    pub fn nce(&self, theta: f64) -> (f64, f64) {
        let (a, b) = self.nce_terms(theta);
        two_sample(&a, &b)
    }

    pub fn ence(&self, theta: f64) -> (f64, f64) {
        let (a, b) = self.ence_terms(theta);
        two_sample(&a, &b)
    }

    /// `J(τ(θ_a)) − J(τ(θ_b))` for NCE, with the standard error of the paired
    /// differences.
    pub fn nce_gap(&self, theta_a: f64, theta_b: f64) -> (f64, f64) {
        let (a1, b1) = self.nce_terms(theta_a);
        let (a2, b2) = self.nce_terms(theta_b);
        let da: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| x - y).collect();
        let db: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| x - y).collect();
        two_sample(&da, &db)
    }
}

/// `mean a + mean b` and its standard error.
fn two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    (ma + mb, (va / a.len() as f64 + vb / b.len() as f64).sqrt())
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var)
}

/// Uniform grid over `[theta_min, theta_max]`; one point gives `theta_min`.
pub fn theta_grid(cfg: &LandscapeConfig) -> Vec<f64> {
    let k = cfg.points;
    if k == 1 {
        return vec![cfg.theta_min];
    }
    let h = (cfg.theta_max - cfg.theta_min) / (k - 1) as f64;
    (0..k).map(|i| cfg.theta_min + h * i as f64).collect()
}

pub fn run_landscape(cfg: &ExperimentConfig) -> Result<Vec<LandscapeRow>> {
    if cfg.experiment != ExperimentKind::Landscape {
        return Err(HarnessError::Config("run_landscape needs a landscape config".into()));
    }
    let l = &cfg.landscape;
    let theta_star = cfg.dataset.theta_star;
    let draws = Draws::new(theta_star, l.theta_q, l.n_mc, cfg.seeds[0]);
    let grid = theta_grid(l);
    Ok(crate::train::run_parallel(cfg.workers, grid.len(), |i| {
        let theta = grid[i];
        let (nce, nce_se) = draws.nce(theta);
        let (ence, ence_se) = draws.ence(theta);
        LandscapeRow { theta, mle_gap: mle_gap_gaussian(theta, theta_star), nce, nce_se, ence, ence_se }
    }))
}

#[derive(Serialize)]
struct LandscapeResults {
    points: usize,
    theta_at_min_nce: Option<f64>,
}

pub fn write_landscape(cfg: &ExperimentConfig, rows: &[LandscapeRow]) -> Result<()> {
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write_rows(&dir.join("grid_landscape.csv"), &cfg.hash(), rows)?;
    let theta_at_min_nce = rows.iter().min_by(|a, b| a.nce.total_cmp(&b.nce)).map(|r| r.theta);
    write_summary(dir, cfg, &[], Vec::new(), LandscapeResults { points: rows.len(), theta_at_min_nce }, &[])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_grid() {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Landscape);
        cfg.landscape.points = 1;
        cfg.landscape.n_mc = 100;
        assert_eq!(run_landscape(&cfg).unwrap().len(), 1);
    }

    #[test]
    fn grid_endpoints() {
        let cfg = ExperimentConfig::defaults(ExperimentKind::Landscape);
        let g = theta_grid(&cfg.landscape);
        assert_eq!(g.len(), 400);
        assert_eq!(g[0], -4.0);
        assert!((g[399] - 36.0).abs() < 1e-12);
    }

    #[test]
    fn log_ratio_is_the_gaussian_likelihood_ratio() {
        let d = Draws::new(16.0, 0.0, 2, 0);
        for (theta, x) in [(0.0, 1.0), (3.0, -2.0), (16.0, 15.5)] {
            let want: f64 = theta * x - 0.5 * theta * theta;
            assert!((d.u(theta, x) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn nce_is_minimal_near_the_truth_for_nearby_noise() {
        let d = Draws::new(1.0, 0.0, 20_000, 3);
        let at = |t: f64| d.nce(t).0;
        assert!(at(1.0) < at(0.0) && at(1.0) < at(2.0));
    }
}
