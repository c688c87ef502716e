//! Maximum-likelihood training of unnormalized models by stochastic
//! compositional optimization (MECO), with the classical baselines it is
//! usually compared against.
//!
//! The MLE objective of an unnormalized model `p₀(x; θ)` is rewritten with a
//! noise distribution `q` as
//!
//! ```text
//! L(θ) = -(1/n) Σ log p₀(xᵢ; θ) + log E_{x~q}[ p₀(x; θ) / q(x) ]
//! ```
//!
//! which is a two-level compositional problem (outer `log`, inner expectation).
//! [`optim::meco`] tracks the inner expectation with a momentum estimator `u`
//! (held in the log domain) and the gradient with a second momentum estimator
//! `v`.
//!
//! The crate is `no_std` + `alloc`; the default `std` feature only turns on
//! runtime SIMD detection in the matrix kernels. All randomness flows through
//! [`RngStream`], so every routine is reproducible bit-for-bit from a
//! `(seed, stream)` pair.

#![no_std]
// Guards such as `!(x > 0.0)` are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod dense;
pub mod error;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod sampling;
pub mod special;
pub mod tape;

pub use crate::dense::DenseArray;
pub use crate::error::{Error, Result};
pub use crate::model::{GaussianMeanModel, Layout, MlpEnergyModel, ParamVector, UnnormalizedModel};
pub use crate::noise::NoiseDistribution;
pub use crate::rng::RngStream;
pub use crate::tape::{Tape, Var};
