//! Scalar special functions.
//!
//! Everything routes through `libm` so results do not depend on the platform
//! C library.

pub use libm::{cos, exp, expm1, fabs, log, log1p, sin, sqrt, tanh};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// `log √(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// `log(eᵃ + eᵇ)` without overflow. `logaddexp(-∞, -∞) = -∞`.
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::INFINITY {
        return f64::INFINITY;
    }
    hi + log1p(exp(lo - hi))
}

/// `log((1/n) Σ exp(vᵢ))`, shifted by the maximum. Empty input gives `-∞`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| exp(v - max)).sum();
    max + log(sum) - log(values.len() as f64)
}

/// `log(1 + eˣ)`
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + log1p(exp(-x))
    } else {
        log1p(exp(x))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `log σ(x) = -softplus(-x)`
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}
