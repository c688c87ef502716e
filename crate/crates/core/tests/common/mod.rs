#![allow(dead_code)]

use meco_core::model::{Activation, MlpEnergyModel};
use meco_core::{DenseArray, ParamVector, RngStream, UnnormalizedModel};

/// Central differences of `f` at `x` with step `h`.
pub fn fd_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut y = x.to_vec();
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let a = f(&y);
        y[i] = x[i] - h;
        let b = f(&y);
        y[i] = x[i];
        g[i] = (a - b) / (2.0 * h);
    }
    g
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(floor)
}

pub const ACTIVATIONS: [Activation; 3] = [Activation::Softplus, Activation::Tanh, Activation::Swish];

/// A small random MLP and parameters for instance `i`.
pub fn small_mlp(i: u64, dim: usize) -> (MlpEnergyModel, ParamVector) {
    let act = ACTIVATIONS[(i % 3) as usize];
    let m = MlpEnergyModel::new(dim, &[5, 4], act);
    let mut rng = RngStream::new(i, 77);
    let th = m.init_params(&mut rng);
    // Non-zero biases so that every parameter block is exercised.
    let v: Vec<f64> = th.values().iter().map(|w| w + 0.1 * rng.normal()).collect();
    (m, th.with_values(v))
}

pub fn random_batch(rng: &mut RngStream, n: usize, d: usize, scale: f64) -> DenseArray {
    rng.normal_batch(n, d).map(|v| v * scale)
}

pub fn with_values(th: &ParamVector, v: &[f64]) -> ParamVector {
    th.with_values(v.to_vec())
}

pub fn log_unnorm_sum<M: UnnormalizedModel>(m: &M, th: &ParamVector, xs: &DenseArray, w: &[f64]) -> f64 {
    m.log_unnorm(th, xs).iter().zip(w).map(|(a, b)| a * b).sum()
}
