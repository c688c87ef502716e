//! Experiment runner for `meco-core`: JSON configs, the Gaussian race, the
//! loss-landscape sweep, noise-variance diagnostics and the 2-D density
//! benchmark, with CSV/JSON outputs and binary checkpoints.
//!
//! Every output derives from `(config, seed)` alone; traces are
//! byte-reproducible under step budgets.

// Guards such as `!(x > 0.0)` are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod density2d;
pub mod error;
pub mod gaussian1d;
pub mod io;
pub mod landscape;
pub mod report;
pub mod train;
pub mod variance;

use std::path::Path;

use meco_core::data::{generate, Dataset, DatasetSpec};
use meco_core::DenseArray;

pub use config::{ExperimentConfig, ExperimentKind, MethodSpec};
pub use error::{HarnessError, Result};

/// Salt that separates the held-out set from the training set of a seed.
const TEST_SEED_SALT: u64 = 0x7E57_5E7E_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// The configured dataset for `seed`; the test split uses an independent
/// generator seed.
pub fn dataset(cfg: &ExperimentConfig, seed: u64, split: Split) -> Result<DenseArray> {
    let ds: Dataset = cfg.dataset.name.parse()?;
    let (n, seed) = match split {
        Split::Train => (cfg.dataset.n, seed),
        Split::Test => (cfg.dataset.n_test, seed ^ TEST_SEED_SALT),
    };
    let spec = DatasetSpec { dataset: ds, n, seed, theta_star: cfg.dataset.theta_star };
    Ok(generate(&spec)?)
}

/// Writes a generated dataset as CSV with a header row.
pub fn generate_data(name: &str, n: usize, seed: u64, theta_star: f64, out: &Path) -> Result<()> {
    let ds: Dataset = name.parse()?;
    let pts = generate(&DatasetSpec { dataset: ds, n, seed, theta_star })?;
    io::write_points(out, None, &pts)
}

/// Runs an experiment and writes its outputs under `cfg.output_dir`.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<()> {
    match cfg.experiment {
        ExperimentKind::Gaussian1d => gaussian1d::write_gaussian1d(cfg, &gaussian1d::run_gaussian1d(cfg)?),
        ExperimentKind::Landscape => landscape::write_landscape(cfg, &landscape::run_landscape(cfg)?),
        ExperimentKind::Variance => variance::write_variance(cfg, &variance::run_variance(cfg)?),
        ExperimentKind::Density2d => density2d::write_density2d(cfg, &density2d::run_density2d(cfg)?),
    }
}
