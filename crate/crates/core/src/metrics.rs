//! Sample-quality metrics: squared parameter error, kernel MMD and the
//! Fréchet distance between Gaussians fitted to two point clouds.
//!
//! On 2-D toy data there is no feature network, so the "FID" of the density
//! benchmark is the Fréchet distance of the raw coordinates.

use alloc::vec;
use alloc::vec::Vec;

use crate::dense::DenseArray;
use crate::error::{contract, Error, Result};
use crate::special::{exp, sqrt};

/// `‖θ − θ*‖²`
pub fn mse_theta(theta: &[f64], theta_star: &[f64]) -> f64 {
    assert_eq!(theta.len(), theta_star.len(), "parameter shapes differ");
    theta.iter().zip(theta_star).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance of the pooled batches.
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmdEstimator {
    Biased,
    /// Excludes the diagonal from the within-set means.
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdConfig {
    pub bandwidth: Bandwidth,
    pub estimator: MmdEstimator,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self { bandwidth: Bandwidth::MedianHeuristic, estimator: MmdEstimator::Biased }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Exact median of all pairwise distances `‖xᵢ − xⱼ‖`, `i < j`; the lower
/// median for an even count.
pub fn median_pairwise_distance(points: &DenseArray) -> Result<f64> {
    let n = points.rows();
    contract!(n >= 2, "median heuristic needs at least two points");
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(points.row(i), points.row(j)));
        }
    }
    let k = (d.len() - 1) / 2;
    let (_, m, _) = d.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    Ok(sqrt(*m))
}

/// Sum of `exp(−‖a − b‖²/(2σ²))` over all pairs, optionally skipping `i = j`.
/// Rows are visited in a fixed order so the result is reproducible.
fn kernel_sum(x: &DenseArray, y: &DenseArray, inv_two_s2: f64, skip_diag: bool) -> f64 {
    let mut total = 0.0;
    for (i, a) in x.iter_rows().enumerate() {
        let mut row = 0.0;
        for (j, b) in y.iter_rows().enumerate() {
            if skip_diag && i == j {
                continue;
            }
            row += exp(-sq_dist(a, b) * inv_two_s2);
        }
        total += row;
    }
    total
}

/// Squared MMD with a Gaussian kernel `k(a, b) = exp(−‖a − b‖²/(2σ²))`.
pub fn mmd2(x: &DenseArray, y: &DenseArray, config: &MmdConfig) -> Result<f64> {
    let (n, m) = (x.rows(), y.rows());
    contract!(n > 0 && m > 0 && !x.is_empty() && !y.is_empty(), "MMD needs non-empty batches");
    contract!(x.cols() == y.cols(), "MMD batches differ in dimension");
    if config.estimator == MmdEstimator::Unbiased {
        contract!(n >= 2 && m >= 2, "unbiased MMD needs at least two points per batch");
    }
    let sigma = match config.bandwidth {
        Bandwidth::Fixed(s) => {
            contract!(s > 0.0 && s.is_finite(), "bandwidth must be positive");
            s
        }
        Bandwidth::MedianHeuristic => {
            let s = median_pairwise_distance(&x.vstack(y))?;
            if s > 0.0 {
                s
            } else {
                1.0
            }
        }
    };
    let c = 1.0 / (2.0 * sigma * sigma);
    let (nf, mf) = (n as f64, m as f64);
    let kxy = kernel_sum(x, y, c, false) / (nf * mf);
    let (kxx, kyy) = match config.estimator {
        MmdEstimator::Biased => (kernel_sum(x, x, c, false) / (nf * nf), kernel_sum(y, y, c, false) / (mf * mf)),
        MmdEstimator::Unbiased => {
            (kernel_sum(x, x, c, true) / (nf * (nf - 1.0)), kernel_sum(y, y, c, true) / (mf * (mf - 1.0)))
        }
    };
    Ok(kxx + kyy - 2.0 * kxy)
}

/// Mean and covariance of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub cov: Vec<f64>,
}

impl GaussianSummary {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        contract!(cov.len() == d * d, "covariance must be {d}x{d}");
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample mean and unbiased covariance.
    pub fn fit(points: &DenseArray) -> Result<Self> {
        let (n, d) = (points.rows(), points.cols());
        contract!(n >= 2, "fitting a covariance needs at least two points");
        let mut mean = vec![0.0; d];
        for x in points.iter_rows() {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; d * d];
        for x in points.iter_rows() {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
        Ok(Self { mean, cov })
    }
}

/// Cyclic Jacobi eigen-decomposition of a symmetric `d × d` matrix.
/// Returns eigenvalues and row-major eigenvectors (columns).
pub fn symmetric_eigen(a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * d + j] * m[i * d + j])
            .sum();
        let scale: f64 = m.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * d + q] - m[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..d {
                    let (mkp, mkq) = (m[k * d + p], m[k * d + q]);
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let (mpk, mqk) = (m[p * d + k], m[q * d + k]);
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[k * d + p], v[k * d + q]);
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..d).map(|i| m[i * d + i]).collect(), v)
}

/// Tolerance below which negative eigenvalues are treated as rounding.
pub const EIGEN_TOL: f64 = 1e-10;

fn checked_eigen(a: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (w, v) = symmetric_eigen(a, d);
    if let Some(bad) = w.iter().find(|&&x| x < -EIGEN_TOL) {
        return Err(Error::Input(alloc::format!("matrix is not positive semi-definite (eigenvalue {bad})")));
    }
    Ok((w.into_iter().map(|x| x.max(0.0)).collect(), v))
}

/// `V diag(f(w)) Vᵀ`
fn reassemble(w: &[f64], v: &[f64], d: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| v[i * d + k] * f(w[k]) * v[j * d + k]).sum();
        }
    }
    out
}

fn matmul_sq(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| a[i * d + k] * b[k * d + j]).sum();
        }
    }
    out
}

/// `‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`, with the trace of the
/// square root taken as `tr (Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}`.
pub fn frechet2(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    let d = a.dim();
    contract!(b.dim() == d, "summaries differ in dimension");
    let sym = |m: &[f64]| -> Vec<f64> {
        let mut s = m.to_vec();
        for i in 0..d {
            for j in 0..d {
                s[i * d + j] = 0.5 * (m[i * d + j] + m[j * d + i]);
            }
        }
        s
    };
    let (wa, va) = checked_eigen(&sym(&a.cov), d)?;
    checked_eigen(&sym(&b.cov), d)?;
    let ra = reassemble(&wa, &va, d, sqrt);
    let inner = sym(&matmul_sq(&matmul_sq(&ra, &b.cov, d), &ra, d));
    let (wi, _) = checked_eigen(&inner, d)?;
    let tr_sqrt: f64 = wi.iter().map(|&x| sqrt(x)).sum();
    let tr_a: f64 = (0..d).map(|i| a.cov[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| b.cov[i * d + i]).sum();
    Ok(mse_theta(&a.mean, &b.mean) + tr_a + tr_b - 2.0 * tr_sqrt)
}
