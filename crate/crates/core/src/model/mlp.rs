use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Layout, ParamVector, Recorded, UnnormalizedModel};
use crate::dense::DenseArray;
use crate::rng::RngStream;
use crate::special::{sigmoid, softplus, sqrt, tanh};
use crate::tape::{Tape, Var};

/// Rows per block in batched evaluation; bounds the activation buffers.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Softplus,
    Tanh,
    Swish,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(z),
            Activation::Tanh => tanh(z),
            Activation::Swish => z * sigmoid(z),
        }
    }

    /// Derivative from the pre-activation `z` and activation `h`.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(z),
            Activation::Tanh => 1.0 - h * h,
            Activation::Swish => {
                let s = sigmoid(z);
                s + z * s * (1.0 - s)
            }
        }
    }

    fn record(self, tape: &mut Tape, z: Var) -> Var {
        match self {
            Activation::Softplus => tape.softplus(z),
            Activation::Tanh => tape.tanh(z),
            Activation::Swish => tape.swish(z),
        }
    }
}

/// Fully connected energy network `f₀(x; θ)` with `p₀ = exp(f₀)`.
///
/// Layer `l` computes `h ← act(h·Wₗ + bₗ)` with `Wₗ` stored row-major as
/// `fan_in × fan_out`; the last layer is linear with a single output.
#[derive(Debug, Clone)]
pub struct MlpEnergyModel {
    dim: usize,
    widths: Vec<usize>,
    activation: Activation,
    layout: Layout,
}

struct Forward {
    /// `[x, h₁, …, h_L]` per hidden layer, row-major `n × width`.
    acts: Vec<DenseArray>,
    /// Pre-activations `z₁ … z_L`.
    pre: Vec<DenseArray>,
    out: Vec<f64>,
}

impl MlpEnergyModel {
    pub fn new(dim: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut widths = vec![dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let mut blocks = Vec::new();
        for l in 0..widths.len() - 1 {
            blocks.push((format!("layer{l}.weight"), vec![widths[l], widths[l + 1]]));
            blocks.push((format!("layer{l}.bias"), vec![widths[l + 1]]));
        }
        Self { dim, widths, activation, layout: Layout::new(blocks) }
    }

    /// The 3 × 300 softplus network used for 2-D density estimation.
    pub fn standard(dim: usize) -> Self {
        Self::new(dim, &[300, 300, 300], Activation::Softplus)
    }

    pub fn hidden(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    /// Glorot-uniform weights `U(−a, a)`, `a = √(6/(fan_in + fan_out))`, zero biases.
    pub fn init_params(&self, rng: &mut RngStream) -> ParamVector {
        let mut values = Vec::with_capacity(self.layout.len());
        for l in 0..self.widths.len() - 1 {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let a = sqrt(6.0 / (fan_in + fan_out) as f64);
            values.extend((0..fan_in * fan_out).map(|_| rng.uniform_range(-a, a)));
            values.extend(core::iter::repeat_n(0.0, fan_out));
        }
        ParamVector::new(self.layout.clone(), values).expect("layout and values built together")
    }

    fn layer<'a>(&self, theta: &'a ParamVector, l: usize) -> (&'a [f64], &'a [f64]) {
        let slices = self.layout.slices();
        let w = &slices[2 * l];
        let b = &slices[2 * l + 1];
        (&theta.values()[w.range()], &theta.values()[b.range()])
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn forward(&self, theta: &ParamVector, xs: &DenseArray) -> Forward {
        let n = xs.rows();
        let mut acts = vec![xs.clone()];
        let mut pre = Vec::with_capacity(self.layers() - 1);
        for l in 0..self.layers() - 1 {
            let (w, b) = self.layer(theta, l);
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let mut z = vec![0.0; n * fan_out];
            for row in z.chunks_mut(fan_out) {
                row.copy_from_slice(b);
            }
            gemm_slices(n, fan_in, fan_out, acts[l].data(), false, w, false, 1.0, &mut z);
            let h: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
            pre.push(DenseArray::matrix(n, fan_out, z));
            acts.push(DenseArray::matrix(n, fan_out, h));
        }
        let last = self.layers() - 1;
        let (w, b) = self.layer(theta, last);
        let mut out = vec![b[0]; n];
        gemm_slices(n, self.widths[last], 1, acts[last].data(), false, w, false, 1.0, &mut out);
        Forward { acts, pre, out }
    }

    /// Backpropagates output cotangents `dout`. Returns the parameter
    /// gradient (when `want_theta`) and the input gradient (when `want_x`).
    fn backward(
        &self,
        theta: &ParamVector,
        fwd: &Forward,
        dout: &[f64],
        want_theta: bool,
        want_x: bool,
    ) -> (Vec<f64>, Option<DenseArray>) {
        let n = dout.len();
        let mut grad = if want_theta { vec![0.0; self.layout.len()] } else { Vec::new() };
        let slices = self.layout.slices();
        let last = self.layers() - 1;

        let (w_last, _) = self.layer(theta, last);
        let h_last = &fwd.acts[last];
        if want_theta {
            let w_range = slices[2 * last].range();
            gemm_slices(self.widths[last], n, 1, h_last.data(), true, dout, false, 0.0, &mut grad[w_range]);
            grad[slices[2 * last + 1].offset] = dout.iter().sum();
        }
        // dH = dout · W_lastᵀ
        let mut dh = vec![0.0; n * self.widths[last]];
        gemm_slices(n, 1, self.widths[last], dout, false, w_last, true, 0.0, &mut dh);

        for l in (0..last).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let z = fwd.pre[l].data();
            let h = fwd.acts[l + 1].data();
            for ((d, &zv), &hv) in dh.iter_mut().zip(z).zip(h) {
                *d *= self.activation.derivative(zv, hv);
            }
            if want_theta {
                let w_range = slices[2 * l].range();
                gemm_slices(fan_in, n, fan_out, fwd.acts[l].data(), true, &dh, false, 0.0, &mut grad[w_range]);
                let b_range = slices[2 * l + 1].range();
                let gb = &mut grad[b_range];
                for row in dh.chunks(fan_out) {
                    for (g, v) in gb.iter_mut().zip(row) {
                        *g += v;
                    }
                }
            }
            if l > 0 || want_x {
                let (w, _) = self.layer(theta, l);
                let mut next = vec![0.0; n * fan_in];
                gemm_slices(n, fan_out, fan_in, &dh, false, w, true, 0.0, &mut next);
                dh = next;
            }
        }
        let dx = want_x.then(|| DenseArray::matrix(n, self.dim, dh));
        (grad, dx)
    }
}

fn rows_chunks(xs: &DenseArray) -> impl Iterator<Item = DenseArray> + '_ {
    let n = xs.rows();
    let d = xs.cols();
    (0..n).step_by(CHUNK).map(move |start| {
        let end = (start + CHUNK).min(n);
        DenseArray::matrix(end - start, d, xs.data()[start * d..end * d].to_vec())
    })
}

impl UnnormalizedModel for MlpEnergyModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn log_unnorm(&self, theta: &ParamVector, xs: &DenseArray) -> Vec<f64> {
        assert_eq!(xs.cols(), self.dim, "batch width must equal the model dimension");
        let mut out = Vec::with_capacity(xs.rows());
        for chunk in rows_chunks(xs) {
            out.extend(self.forward(theta, &chunk).out);
        }
        out
    }

    fn weighted_grad_theta(&self, theta: &ParamVector, xs: &DenseArray, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), xs.rows(), "one weight per row");
        let mut total = vec![0.0; self.layout.len()];
        let mut start = 0;
        for chunk in rows_chunks(xs) {
            let n = chunk.rows();
            let fwd = self.forward(theta, &chunk);
            let (g, _) = self.backward(theta, &fwd, &weights[start..start + n], true, false);
            for (t, v) in total.iter_mut().zip(g) {
                *t += v;
            }
            start += n;
        }
        total
    }

    fn grad_x(&self, theta: &ParamVector, xs: &DenseArray) -> DenseArray {
        assert_eq!(xs.cols(), self.dim, "batch width must equal the model dimension");
        let mut data = Vec::with_capacity(xs.len());
        for chunk in rows_chunks(xs) {
            let fwd = self.forward(theta, &chunk);
            let ones = vec![1.0; chunk.rows()];
            let (_, dx) = self.backward(theta, &fwd, &ones, false, true);
            data.extend(dx.expect("input gradient requested").into_data());
        }
        DenseArray::matrix(xs.rows(), self.dim, data)
    }

    fn record(&self, tape: &mut Tape, theta: &ParamVector, x: Var) -> Recorded {
        let mut params = Vec::with_capacity(2 * self.layers());
        let mut h = x;
        for l in 0..self.layers() {
            let (w, b) = self.layer(theta, l);
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let wv = tape.leaf(DenseArray::matrix(fan_in, fan_out, w.to_vec()));
            let bv = tape.leaf(DenseArray::matrix(1, fan_out, b.to_vec()));
            params.push(wv);
            params.push(bv);
            let lin = tape.matmul(h, wv);
            let z = tape.add_row(lin, bv);
            h = if l + 1 < self.layers() { self.activation.record(tape, z) } else { z };
        }
        Recorded { params, output: h }
    }
}

/// `c ← op(a)·op(b) + beta·c` on raw row-major slices, `op(a)` is `m × k`.
#[allow(clippy::too_many_arguments)]
fn gemm_slices(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm slice too short");
    if m == 0 || n == 0 {
        return;
    }
    // Row-major a is m×k (or k×m when transposed); likewise b.
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; `c` is a distinct mutable slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
