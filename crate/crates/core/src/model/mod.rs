//! Unnormalized models `p₀(x; θ)`, always handled through `log p₀`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::dense::DenseArray;
use crate::error::{contract, Result};
use crate::tape::{Tape, Var};

mod gaussian;
mod mlp;

pub use gaussian::{log_partition_gaussian, mle_gap_gaussian, GaussianMeanModel};
pub use mlp::{Activation, MlpEnergyModel};

/// One named block of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Slice {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named slices that tile `0..len` in order, without gaps or overlap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    slices: Vec<Slice>,
}

impl Layout {
    pub fn new<N: Into<String>>(blocks: impl IntoIterator<Item = (N, Vec<usize>)>) -> Self {
        let mut offset = 0;
        let slices = blocks
            .into_iter()
            .map(|(name, shape)| {
                let s = Slice { name: name.into(), offset, shape };
                offset += s.len();
                s
            })
            .collect();
        Self { slices }
    }

    /// Validates externally supplied slices (e.g. from a checkpoint header).
    pub fn from_slices(slices: Vec<Slice>) -> Result<Self> {
        let mut expect = 0;
        for s in &slices {
            contract!(s.offset == expect, "slice `{}` starts at {} instead of {}", s.name, s.offset, expect);
            expect += s.len();
        }
        Ok(Self { slices })
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.last().map_or(0, |s| s.offset + s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&Slice> {
        self.slices.iter().find(|s| s.name == name)
    }
}

/// Flat model parameters with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        contract!(
            layout.len() == values.len(),
            "layout covers {} values but {} were given",
            layout.len(),
            values.len()
        );
        contract!(values.iter().all(|v| v.is_finite()), "non-finite parameter value");
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        let values = alloc::vec![0.0; layout.len()];
        Self { values, layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|s| &self.values[s.range()])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `θ ← θ + alpha·dir`
    pub fn axpy(&mut self, alpha: f64, dir: &[f64]) {
        assert_eq!(dir.len(), self.values.len(), "axpy length mismatch");
        for (t, d) in self.values.iter_mut().zip(dir) {
            *t += alpha * d;
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "with_values length mismatch");
        Self { values, layout: self.layout.clone() }
    }
}

/// Parameter leaves and per-row output of a model recorded on a tape.
#[derive(Debug, Clone)]
pub struct Recorded {
    /// One leaf per layout slice, in layout order.
    pub params: Vec<Var>,
    /// `n × 1` column of `log p₀(xᵢ; θ)`.
    pub output: Var,
}

impl Recorded {
    /// Concatenates per-slice gradient arrays into a flat vector.
    pub fn flatten(grads: &[DenseArray]) -> Vec<f64> {
        grads.iter().flat_map(|g| g.data().iter().copied()).collect()
    }
}

/// `p₀(x; θ)` exposed through its logarithm.
///
/// Batches are `n × dim` arrays. Implementations are immutable and
/// evaluation is side-effect free.
pub trait UnnormalizedModel {
    fn dim(&self) -> usize;

    fn layout(&self) -> &Layout;

    /// `log p₀(xᵢ; θ)` for every row.
    fn log_unnorm(&self, theta: &ParamVector, xs: &DenseArray) -> Vec<f64>;

    /// `Σᵢ wᵢ ∇_θ log p₀(xᵢ; θ)`.
    fn weighted_grad_theta(&self, theta: &ParamVector, xs: &DenseArray, weights: &[f64]) -> Vec<f64>;

    /// `∇ₓ log p₀(xᵢ; θ)` for every row, as an `n × dim` array.
    fn grad_x(&self, theta: &ParamVector, xs: &DenseArray) -> DenseArray;

    /// Records `log p₀` of every row of `x` on a tape, with the parameters as
    /// fresh leaves, so that higher derivatives can be taken.
    fn record(&self, tape: &mut Tape, theta: &ParamVector, x: Var) -> Recorded;

    fn log_unnorm_point(&self, theta: &ParamVector, x: &[f64]) -> f64 {
        let xs = DenseArray::matrix(1, x.len(), x.to_vec());
        self.log_unnorm(theta, &xs)[0]
    }

    fn grad_theta_point(&self, theta: &ParamVector, x: &[f64]) -> Vec<f64> {
        let xs = DenseArray::matrix(1, x.len(), x.to_vec());
        self.weighted_grad_theta(theta, &xs, &[1.0])
    }

    /// Per-row parameter gradients as an `n × P` array.
    fn grad_theta_rows(&self, theta: &ParamVector, xs: &DenseArray) -> DenseArray {
        let p = self.layout().len();
        let mut out = Vec::with_capacity(xs.rows() * p);
        for x in xs.iter_rows() {
            out.extend(self.grad_theta_point(theta, x));
        }
        DenseArray::matrix(xs.rows(), p, out)
    }

    fn check_batch(&self, theta: &ParamVector, xs: &DenseArray) -> Result<()> {
        contract!(xs.cols() == self.dim(), "batch width {} but model dimension {}", xs.cols(), self.dim());
        contract!(theta.layout() == self.layout(), "parameter layout does not match the model");
        Ok(())
    }
}
