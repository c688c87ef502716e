use alloc::vec;
use alloc::vec::Vec;

use super::{Layout, ParamVector, Recorded, UnnormalizedModel};
use crate::dense::DenseArray;
use crate::special::{dot, HALF_LN_2PI};
use crate::tape::{Tape, Var};

/// Unit-variance Gaussian with unknown mean as an exponential family:
/// `log p₀(x; θ) = θ·x − ½‖x‖²`.
///
/// The partition function is `(2π)^{d/2} e^{‖θ‖²/2}`; with `θ = 0` this is the
/// standard-normal energy `−½‖x‖²`.
#[derive(Debug, Clone)]
pub struct GaussianMeanModel {
    dim: usize,
    layout: Layout,
}

impl GaussianMeanModel {
    pub fn new(dim: usize) -> Self {
        Self { dim, layout: Layout::new([("theta", vec![dim])]) }
    }

    /// The 1-D model.
    pub fn scalar() -> Self {
        Self::new(1)
    }

    pub fn params(&self, theta: &[f64]) -> ParamVector {
        ParamVector::new(self.layout.clone(), theta.to_vec()).expect("theta length must equal the model dimension")
    }

    /// `log Z(θ)` in closed form.
    pub fn log_partition(&self, theta: &ParamVector) -> f64 {
        self.dim as f64 * HALF_LN_2PI + 0.5 * dot(theta.values(), theta.values())
    }
}

/// `log ∫ e^{θx − x²/2} dx = log √(2π) + θ²/2`.
pub fn log_partition_gaussian(theta: f64) -> f64 {
    HALF_LN_2PI + 0.5 * theta * theta
}

/// `L(θ) − L(θ*)` for data from `N(θ*, 1)`, evaluated from the expected
/// negative log-likelihood `−θ·E[x] + E[x²]/2 + log Z(θ)` rather than from
/// the simplified quadratic.
pub fn mle_gap_gaussian(theta: f64, theta_star: f64) -> f64 {
    let mean = theta_star;
    let second = theta_star * theta_star + 1.0;
    let objective = |t: f64| -t * mean + 0.5 * second + log_partition_gaussian(t);
    objective(theta) - objective(theta_star)
}

impl UnnormalizedModel for GaussianMeanModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn log_unnorm(&self, theta: &ParamVector, xs: &DenseArray) -> Vec<f64> {
        let t = theta.values();
        xs.iter_rows().map(|x| dot(t, x) - 0.5 * dot(x, x)).collect()
    }

    fn weighted_grad_theta(&self, _theta: &ParamVector, xs: &DenseArray, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), xs.rows(), "one weight per row");
        let mut g = vec![0.0; self.dim];
        for (x, &w) in xs.iter_rows().zip(weights) {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += w * xi;
            }
        }
        g
    }

    fn grad_x(&self, theta: &ParamVector, xs: &DenseArray) -> DenseArray {
        let t = theta.values();
        let mut out = xs.clone();
        for r in 0..out.rows() {
            for (o, ti) in out.row_mut(r).iter_mut().zip(t) {
                *o = ti - *o;
            }
        }
        out
    }

    fn grad_theta_rows(&self, _theta: &ParamVector, xs: &DenseArray) -> DenseArray {
        xs.clone()
    }

    fn record(&self, tape: &mut Tape, theta: &ParamVector, x: Var) -> Recorded {
        let t = tape.leaf(DenseArray::matrix(self.dim, 1, theta.values().to_vec()));
        let linear = tape.matmul(x, t);
        let sq = tape.square(x);
        let ones = tape.ones(self.dim, 1);
        let sq_norm = tape.matmul(sq, ones);
        let half = tape.scale(sq_norm, -0.5);
        let output = tape.add(linear, half);
        Recorded { params: vec![t], output }
    }
}
