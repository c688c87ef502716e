//! Noise distributions `q(x)` with exact log-densities and seeded sampling.
//!
//! `q` should overlap the data: a Gaussian fitted to the training set, the
//! training set convolved with a small Gaussian kernel, or a mixture of both.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dense::DenseArray;
use crate::error::{contract, Error, Result};
use crate::model::{ParamVector, UnnormalizedModel};
use crate::rng::RngStream;
use crate::special::{exp, log, norm, LN_2PI};

pub trait NoiseDistribution {
    fn dim(&self) -> usize;

    fn sample(&self, rng: &mut RngStream, count: usize) -> DenseArray;

    fn log_density(&self, x: &[f64]) -> f64;

    fn log_density_batch(&self, xs: &DenseArray) -> Vec<f64> {
        xs.iter_rows().map(|x| self.log_density(x)).collect()
    }

    /// Draws a batch together with the log-density used to weight it. The
    /// default evaluates the exact density; approximations override this.
    fn sample_with_log_density(&self, rng: &mut RngStream, count: usize) -> (DenseArray, Vec<f64>) {
        let xs = self.sample(rng, count);
        let lq = self.log_density_batch(&xs);
        (xs, lq)
    }

    /// `∇_θ log q(x)` for a noise distribution that moves with the model
    /// parameters; `None` for a fixed `q`.
    fn theta_score(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Checks that every log-density is finite, naming the first bad row.
pub fn check_log_density(lq: &[f64]) -> Result<()> {
    match lq.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Input(format!("non-finite noise log-density {} at row {i}", lq[i]))),
        None => Ok(()),
    }
}

/// `N(mean, cov)` with a cached lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedGaussian {
    mean: Vec<f64>,
    cov: Vec<f64>,
    chol: Vec<f64>,
    log_det: f64,
}

impl FittedGaussian {
    /// `cov` is row-major `d × d` and must be symmetric positive definite.
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        contract!(d > 0, "Gaussian needs at least one dimension");
        contract!(cov.len() == d * d, "covariance must be {d}x{d}");
        for i in 0..d {
            for j in 0..i {
                contract!(
                    (cov[i * d + j] - cov[j * d + i]).abs() <= 1e-12 * (1.0 + cov[i * d + j].abs()),
                    "covariance is not symmetric"
                );
            }
        }
        let chol = cholesky(&cov, d)?;
        let log_det = 2.0 * (0..d).map(|i| log(chol[i * d + i])).sum::<f64>();
        Ok(Self { mean, cov, chol, log_det })
    }

    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self> {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = var;
        }
        Self::new(mean, cov)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[f64] {
        &self.cov
    }
}

fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = a[i * d + j] - (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Input(format!("covariance is not positive definite (pivot {s})")));
                }
                l[i * d + i] = crate::special::sqrt(s);
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Ok(l)
}

impl NoiseDistribution for FittedGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut RngStream, count: usize) -> DenseArray {
        let d = self.dim();
        let mut out = Vec::with_capacity(count * d);
        let mut z = vec![0.0; d];
        for _ in 0..count {
            for zi in z.iter_mut() {
                *zi = rng.normal();
            }
            for i in 0..d {
                let lz: f64 = (0..=i).map(|k| self.chol[i * d + k] * z[k]).sum();
                out.push(self.mean[i] + lz);
            }
        }
        DenseArray::matrix(count, d, out)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        // Forward substitution L y = x − μ.
        let mut y = vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|k| self.chol[i * d + k] * y[k]).sum();
            y[i] = (x[i] - self.mean[i] - s) / self.chol[i * d + i];
        }
        let q: f64 = y.iter().map(|v| v * v).sum();
        -0.5 * (d as f64 * LN_2PI + self.log_det + q)
    }
}

/// Sample mean and unbiased covariance plus `jitter·I`.
pub fn fit_gaussian(data: &DenseArray, jitter: f64) -> Result<FittedGaussian> {
    let (n, d) = (data.rows(), data.cols());
    if n < d + 1 {
        return Err(Error::DegenerateData(format!("{n} points cannot fit a {d}-dimensional Gaussian")));
    }
    let mut mean = vec![0.0; d];
    for x in data.iter_rows() {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for x in data.iter_rows() {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    for (k, c) in cov.iter_mut().enumerate() {
        *c /= (n - 1) as f64;
        if k % (d + 1) == 0 {
            *c += jitter;
        }
    }
    FittedGaussian::new(mean, cov)
}

/// The training points convolved with an isotropic Gaussian kernel:
/// `q(x) = (1/n) Σᵢ N(x; xᵢ, s²I)`.
#[derive(Debug, Clone)]
pub struct EmpiricalConvolution {
    anchors: DenseArray,
    kernel_std: f64,
    /// Anchors per mini-batch density estimate; 0 means the full set.
    batch_size: usize,
}

impl EmpiricalConvolution {
    pub fn new(anchors: DenseArray, kernel_std: f64, batch_size: usize) -> Result<Self> {
        contract!(anchors.rows() > 0 && !anchors.is_empty(), "empirical convolution needs anchors");
        contract!(kernel_std > 0.0 && kernel_std.is_finite(), "kernel_std must be positive");
        Ok(Self { anchors, kernel_std, batch_size })
    }

    pub fn anchors(&self) -> &DenseArray {
        &self.anchors
    }

    pub fn kernel_std(&self) -> f64 {
        self.kernel_std
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn log_kernel(&self, x: &[f64], a: &[f64]) -> f64 {
        let s2 = self.kernel_std * self.kernel_std;
        let d = x.len() as f64;
        let r2: f64 = x.iter().zip(a).map(|(u, v)| (u - v) * (u - v)).sum();
        -0.5 * (d * (LN_2PI + log(s2)) + r2 / s2)
    }

    /// Log of the kernel average over the given anchor rows.
    pub fn log_density_over(&self, x: &[f64], anchor_idx: &[usize]) -> f64 {
        let terms: Vec<f64> = anchor_idx.iter().map(|&i| self.log_kernel(x, self.anchors.row(i))).collect();
        crate::special::log_mean_exp(&terms)
    }

    fn draw(&self, rng: &mut RngStream, count: usize) -> (DenseArray, Vec<usize>) {
        let idx = rng.indices(self.anchors.rows(), count);
        let d = self.anchors.cols();
        let mut out = Vec::with_capacity(count * d);
        for &i in &idx {
            for &a in self.anchors.row(i) {
                out.push(a + self.kernel_std * rng.normal());
            }
        }
        (DenseArray::matrix(count, d, out), idx)
    }

    /// Mini-batch anchor set: the anchors that generated the batch plus
    /// `batch_size − 1` extra uniform draws.
    fn minibatch_anchors(&self, rng: &mut RngStream, generating: &[usize]) -> Vec<usize> {
        let mut set = generating.to_vec();
        set.extend(rng.indices(self.anchors.rows(), self.batch_size.saturating_sub(1)));
        set
    }

    fn uses_minibatch(&self) -> bool {
        self.batch_size > 0 && self.batch_size < self.anchors.rows()
    }

    /// Mean and maximum absolute gap between the mini-batch and full-set
    /// log-densities on a fresh batch; both 0 when the full set is used.
    pub fn density_gap(&self, rng: &mut RngStream, count: usize) -> (f64, f64) {
        let (xs, lq) = self.sample_with_log_density(rng, count);
        let full = self.log_density_batch(&xs);
        let gaps: Vec<f64> = lq.iter().zip(&full).map(|(a, b)| (a - b).abs()).collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
        (mean, gaps.iter().copied().fold(0.0, f64::max))
    }
}

/// Each output is a uniformly drawn anchor plus `N(0, kernel_std²·I)`.
pub fn sample_empirical_conv(
    anchors: &DenseArray,
    kernel_std: f64,
    rng: &mut RngStream,
    count: usize,
) -> Result<DenseArray> {
    Ok(EmpiricalConvolution::new(anchors.clone(), kernel_std, 0)?.sample(rng, count))
}

impl NoiseDistribution for EmpiricalConvolution {
    fn dim(&self) -> usize {
        self.anchors.cols()
    }

    fn sample(&self, rng: &mut RngStream, count: usize) -> DenseArray {
        self.draw(rng, count).0
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let all: Vec<usize> = (0..self.anchors.rows()).collect();
        self.log_density_over(x, &all)
    }

    fn sample_with_log_density(&self, rng: &mut RngStream, count: usize) -> (DenseArray, Vec<f64>) {
        let (xs, idx) = self.draw(rng, count);
        if !self.uses_minibatch() {
            let lq = self.log_density_batch(&xs);
            return (xs, lq);
        }
        let set = self.minibatch_anchors(rng, &idx);
        let lq = xs.iter_rows().map(|x| self.log_density_over(x, &set)).collect();
        (xs, lq)
    }
}

/// Finite mixture `Σ wₖ qₖ`.
pub struct Mixture {
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    components: Vec<Box<dyn NoiseDistribution + Send + Sync>>,
}

impl Mixture {
    pub fn new(parts: Vec<(f64, Box<dyn NoiseDistribution + Send + Sync>)>) -> Result<Self> {
        contract!(!parts.is_empty(), "mixture needs at least one component");
        let total: f64 = parts.iter().map(|(w, _)| *w).sum();
        contract!(parts.iter().all(|(w, _)| *w > 0.0 && w.is_finite()), "mixture weights must be positive");
        let d = parts[0].1.dim();
        contract!(parts.iter().all(|(_, c)| c.dim() == d), "mixture components differ in dimension");
        let weights: Vec<f64> = parts.iter().map(|(w, _)| w / total).collect();
        let log_weights = weights.iter().map(|&w| log(w)).collect();
        let components = parts.into_iter().map(|(_, c)| c).collect();
        Ok(Self { log_weights, weights, components })
    }
}

impl core::fmt::Debug for Mixture {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Mixture").field("weights", &self.weights).finish()
    }
}

impl NoiseDistribution for Mixture {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn sample(&self, rng: &mut RngStream, count: usize) -> DenseArray {
        let d = self.dim();
        let mut out = Vec::with_capacity(count * d);
        for _ in 0..count {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut k = self.components.len() - 1;
            for (j, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = j;
                    break;
                }
            }
            out.extend_from_slice(self.components[k].sample(rng, 1).data());
        }
        DenseArray::matrix(count, d, out)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> =
            self.components.iter().zip(&self.log_weights).map(|(c, lw)| lw + c.log_density(x)).collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + log(terms.iter().map(|t| exp(t - m)).sum::<f64>())
    }
}

/// The exact normalized model `N(θ, I)` of the Gaussian mean model, moving
/// with θ. Its `theta_score` lets diagnostics differentiate through `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGaussianNoise {
    inner: FittedGaussian,
}

impl ModelGaussianNoise {
    pub fn new(theta: &[f64]) -> Self {
        let inner = FittedGaussian::isotropic(theta.to_vec(), 1.0).expect("unit covariance is positive definite");
        Self { inner }
    }
}

impl NoiseDistribution for ModelGaussianNoise {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sample(&self, rng: &mut RngStream, count: usize) -> DenseArray {
        self.inner.sample(rng, count)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.inner.log_density(x)
    }

    fn theta_score(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(x.iter().zip(self.inner.mean()).map(|(a, m)| a - m).collect())
    }
}

/// Monte-Carlo estimates of the variance constants of the inner function
/// `g(θ; z̃) = p₀(z̃; θ)/q(z̃)` and of `h(θ; z) = −log p₀(z; θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    /// `Var[ḡ]` where `ḡ` averages `batch` ratios.
    pub sigma_g2: f64,
    /// `E‖∇ḡ − ∇g‖²`.
    pub zeta_g2: f64,
    /// `E‖∇h(θ; z) − ∇h‖²` over the data; `None` without data.
    pub zeta_h2: Option<f64>,
    /// Mean ratio, an estimate of the partition function.
    pub mean_ratio: f64,
    /// True when some `exp(log p₀ − log q)` overflowed.
    pub overflow: bool,
    pub n_mc: usize,
    pub batch: usize,
}

/// Per-sample gradient of `g` is `r·(∇_θ log p₀ − ∇_θ log q)`; the second term
/// is present only for a `q` that moves with θ.
pub fn variance_diagnostic<M: UnnormalizedModel + ?Sized, Q: NoiseDistribution + ?Sized>(
    model: &M,
    theta: &ParamVector,
    q: &Q,
    data: Option<&DenseArray>,
    n_mc: usize,
    batch: usize,
    rng: &mut RngStream,
) -> Result<VarianceReport> {
    contract!(n_mc >= 2, "variance needs at least two Monte-Carlo replicates");
    contract!(batch >= 1, "batch must be positive");
    let p = theta.len();
    let mut overflow = false;
    let mut ratios = Vec::with_capacity(n_mc);
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let (xs, lq) = q.sample_with_log_density(rng, batch);
        check_log_density(&lq)?;
        let lp = model.log_unnorm(theta, &xs);
        let r: Vec<f64> = lp.iter().zip(&lq).map(|(a, b)| exp(a - b)).collect();
        overflow |= r.iter().any(|v| !v.is_finite());
        let mut g = model.weighted_grad_theta(theta, &xs, &r);
        for (x, ri) in xs.iter_rows().zip(&r) {
            if let Some(s) = q.theta_score(x) {
                for (gj, sj) in g.iter_mut().zip(s) {
                    *gj -= ri * sj;
                }
            }
        }
        let b = batch as f64;
        ratios.push(r.iter().sum::<f64>() / b);
        grads.push(g.into_iter().map(|v| v / b).collect());
    }
    let (mean_ratio, sigma_g2) = mean_var(&ratios);
    let zeta_g2 = vector_spread(&grads, p);
    let zeta_h2 = match data {
        Some(d) => {
            model.check_batch(theta, d)?;
            let rows = model.grad_theta_rows(theta, d);
            let per: Vec<Vec<f64>> = rows.iter_rows().map(|r| r.iter().map(|v| -v).collect()).collect();
            Some(vector_spread(&per, p))
        }
        None => None,
    };
    Ok(VarianceReport { sigma_g2, zeta_g2, zeta_h2, mean_ratio, overflow, n_mc, batch })
}

/// Sample mean and unbiased variance (two-pass).
fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var)
}

/// Unbiased `E‖gᵢ − ḡ‖²`.
fn vector_spread(gs: &[Vec<f64>], p: usize) -> f64 {
    let n = gs.len() as f64;
    let mut mean = vec![0.0; p];
    for g in gs {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v / n;
        }
    }
    let total: f64 = gs
        .iter()
        .map(|g| {
            let diff: Vec<f64> = g.iter().zip(&mean).map(|(a, b)| a - b).collect();
            let d = norm(&diff);
            d * d
        })
        .sum();
    total / (n - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_gaussian_hand_example() {
        let data = DenseArray::from_rows(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]).unwrap();
        let g = fit_gaussian(&data, 0.0).unwrap();
        assert_eq!(g.mean(), &[1.0, 1.0]);
        let c = g.cov();
        assert!((c[0] - 4.0 / 3.0).abs() < 1e-15 && (c[3] - 4.0 / 3.0).abs() < 1e-15);
        assert!(c[1].abs() < 1e-15);
    }

    #[test]
    fn repeated_point_gives_jitter_covariance() {
        let data = DenseArray::from_rows(&[[1.0, 2.0]; 5]).unwrap();
        let g = fit_gaussian(&data, 1e-3).unwrap();
        assert_eq!(g.cov(), &[1e-3, 0.0, 0.0, 1e-3]);
    }

    #[test]
    fn too_few_points_is_degenerate() {
        let data = DenseArray::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(fit_gaussian(&data, 0.0), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn standard_normal_density_at_mean() {
        let g = FittedGaussian::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        assert!((g.log_density(&[0.0, 0.0]) + LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn correlated_density_matches_closed_form() {
        let g = FittedGaussian::new(vec![1.0, -1.0], vec![2.0, 0.6, 0.6, 1.0]).unwrap();
        let (x0, x1) = (0.3 - 1.0, 0.7 + 1.0);
        let det = 2.0 * 1.0 - 0.36;
        let quad = (1.0 * x0 * x0 - 2.0 * 0.6 * x0 * x1 + 2.0 * x1 * x1) / det;
        let want = -LN_2PI - 0.5 * log(det) - 0.5 * quad;
        assert!((g.log_density(&[0.3, 0.7]) - want).abs() < 1e-13);
    }

    #[test]
    fn non_pd_covariance_is_rejected() {
        assert!(FittedGaussian::new(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn mixture_of_one_equals_component() {
        let g = FittedGaussian::isotropic(vec![0.5], 2.0).unwrap();
        let m = Mixture::new(vec![(3.0, Box::new(g.clone()) as Box<dyn NoiseDistribution + Send + Sync>)]).unwrap();
        assert!((m.log_density(&[1.3]) - g.log_density(&[1.3])).abs() < 1e-15);
    }

    #[test]
    fn full_batch_convolution_has_no_gap() {
        let anchors = DenseArray::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let q = EmpiricalConvolution::new(anchors, 0.5, 0).unwrap();
        let mut rng = RngStream::new(1, 0);
        assert_eq!(q.density_gap(&mut rng, 10), (0.0, 0.0));
    }
}
