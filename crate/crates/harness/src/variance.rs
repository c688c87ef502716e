//! Noise-variance diagnostics on the Gaussian mean model: the variance
//! constants of the inner function for the exact model noise and for
//! mean-shifted noise `N(θ + δ, 1)`, plus how many MECO steps each noise
//! needs to reach a target MSE.

use meco_core::noise::{variance_diagnostic, FittedGaussian, ModelGaussianNoise, VarianceReport};
use meco_core::{GaussianMeanModel, RngStream};
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, NoiseSpec, Objective};
use crate::error::{HarnessError, Result};
use crate::io::{create_dir, write_rows, write_trace, TraceRow};
use crate::report::{aggregate, write_summary, CellSummary};
use crate::train::{method_stream, run_budget, run_parallel, Cell, NoiseRuntime};
use crate::{dataset, Split};

/// One noise distribution of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum NoiseCase {
    /// `q = p_θ`, moving with the parameters.
    Exact,
    /// `q = N(θ_eval + δ, 1)`, fixed.
    Shift(f64),
}

impl NoiseCase {
    pub fn label(self) -> String {
        match self {
            NoiseCase::Exact => "exact".into(),
            NoiseCase::Shift(d) => format!("delta{d}"),
        }
    }

    fn spec(self, theta: f64) -> NoiseSpec {
        match self {
            NoiseCase::Exact => NoiseSpec::ModelExact,
            NoiseCase::Shift(d) => NoiseSpec::Gaussian { mean: vec![theta + d], var: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub noise: String,
    pub delta: Option<f64>,
    pub sigma_g2: f64,
    pub zeta_g2: f64,
    pub zeta_h2: Option<f64>,
    pub mean_ratio: f64,
    pub overflow: bool,
}

#[derive(Debug, Clone)]
pub struct VarianceOutcome {
    pub diagnostics: Vec<(NoiseCase, VarianceReport)>,
    /// Convergence cells in (noise case, seed) order.
    pub cells: Vec<CellSummary>,
    /// First step with MSE at or below the target, per cell.
    pub steps_to_target: Vec<Option<u64>>,
    pub traces: Vec<Vec<TraceRow>>,
    pub wall_ms: Vec<f64>,
}

impl VarianceOutcome {
    /// Steps to target for `case` in seed order.
    pub fn steps_for(&self, case: NoiseCase) -> Vec<Option<u64>> {
        let label = case.label();
        self.cells.iter().zip(&self.steps_to_target).filter(|(c, _)| c.method == label).map(|(_, s)| *s).collect()
    }
}

pub fn cases(cfg: &ExperimentConfig) -> Vec<NoiseCase> {
    let mut v = Vec::new();
    if cfg.variance.include_exact {
        v.push(NoiseCase::Exact);
    }
    v.extend(cfg.variance.deltas.iter().map(|&d| NoiseCase::Shift(d)));
    v
}

const DIAGNOSTIC_STREAM: u64 = 0xD1A6;

/// Variance constants of one noise case at `θ_eval`.
pub fn diagnose(cfg: &ExperimentConfig, case: NoiseCase, seed: u64) -> Result<VarianceReport> {
    let v = &cfg.variance;
    let model = GaussianMeanModel::scalar();
    let theta = model.params(&[v.theta]);
    let data = dataset(cfg, seed, Split::Train)?;
    let mut rng = RngStream::new(seed, DIAGNOSTIC_STREAM);
    let report = match case {
        NoiseCase::Exact => {
            let q = ModelGaussianNoise::new(&[v.theta]);
            variance_diagnostic(&model, &theta, &q, Some(&data), v.n_mc, v.batch, &mut rng)?
        }
        NoiseCase::Shift(d) => {
            let q = FittedGaussian::isotropic(vec![v.theta + d], 1.0)?;
            variance_diagnostic(&model, &theta, &q, Some(&data), v.n_mc, v.batch, &mut rng)?
        }
    };
    Ok(report)
}

pub fn run_variance(cfg: &ExperimentConfig) -> Result<VarianceOutcome> {
    if cfg.experiment != ExperimentKind::Variance {
        return Err(HarnessError::Config("run_variance needs a variance config".into()));
    }
    let spec = match cfg.methods.as_slice() {
        [m] if m.resolve()?.0 == Objective::Meco => m,
        _ => return Err(HarnessError::Config("variance runs exactly one meco method".into())),
    };
    let cases = cases(cfg);
    let diag = cases.iter().map(|&c| Ok((c, diagnose(cfg, c, cfg.seeds[0])?))).collect::<Result<Vec<_>>>()?;

    let v = &cfg.variance;
    let model = GaussianMeanModel::scalar();
    let datasets = cfg.seeds.iter().map(|&s| dataset(cfg, s, Split::Train)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..cases.len()).flat_map(|c| (0..cfg.seeds.len()).map(move |s| (c, s))).collect();
    let theta_star = cfg.dataset.theta_star;
    let runs = run_parallel(cfg.workers, jobs.len(), |j| -> Result<_> {
        let (ci, si) = jobs[j];
        let (case, seed, data) = (cases[ci], cfg.seeds[si], &datasets[si]);
        let noise = NoiseRuntime::build(&case.spec(v.theta), data)?;
        // Shared across cases so that only the noise differs.
        let rng = RngStream::new(seed, method_stream(spec.label()));
        let mut cell = Cell::new(&model, data, spec, noise, model.params(&[v.theta_init]), rng)?;
        let run = run_budget(&mut cell, &cfg.budget, 1, |t| (t.values()[0] - theta_star).powi(2));
        let hit = run.rows.iter().find(|r| r.mse <= v.target_mse).map(|r| r.step);
        let last = run.rows.last().expect("initial row");
        let summary = CellSummary {
            cell: format!("{}_s{seed}", case.label()),
            method: case.label(),
            dataset: cfg.dataset.name.clone(),
            seed,
            steps: run.steps,
            clip_events: last.clip_events,
            final_mse: Some(last.mse),
            status: run.status.clone(),
            mmd2: None,
            frechet2: None,
        };
        Ok((summary, hit, run))
    });
    let mut out =
        VarianceOutcome { diagnostics: diag, cells: vec![], steps_to_target: vec![], traces: vec![], wall_ms: vec![] };
    for r in runs {
        let (summary, hit, run) = r?;
        out.cells.push(summary);
        out.steps_to_target.push(hit);
        out.traces.push(run.rows);
        out.wall_ms.push(run.wall_ms);
    }
    Ok(out)
}

pub fn diagnostic_rows(out: &VarianceOutcome) -> Vec<DiagnosticRow> {
    out.diagnostics
        .iter()
        .map(|(c, r)| DiagnosticRow {
            noise: c.label(),
            delta: match c {
                NoiseCase::Exact => None,
                NoiseCase::Shift(d) => Some(*d),
            },
            sigma_g2: r.sigma_g2,
            zeta_g2: r.zeta_g2,
            zeta_h2: r.zeta_h2,
            mean_ratio: r.mean_ratio,
            overflow: r.overflow,
        })
        .collect()
}

#[derive(Serialize)]
struct VarianceResults {
    diagnostics: Vec<DiagnosticRow>,
    steps_to_target: Vec<(String, Option<u64>)>,
}

pub fn write_variance(cfg: &ExperimentConfig, out: &VarianceOutcome) -> Result<()> {
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let hash = cfg.hash();
    for (c, t) in out.cells.iter().zip(&out.traces) {
        write_trace(&dir.join(format!("trace_{}.csv", c.cell)), &hash, t)?;
    }
    let rows = diagnostic_rows(out);
    write_rows(&dir.join("variance.csv"), &hash, &rows)?;
    let aggs = aggregate(&out.cells, "steps_to_target", |c| {
        let i = out.cells.iter().position(|x| x.cell == c.cell)?;
        out.steps_to_target[i].map(|s| s as f64)
    });
    let steps = out.cells.iter().zip(&out.steps_to_target).map(|(c, s)| (c.cell.clone(), *s)).collect();
    write_summary(
        dir,
        cfg,
        &out.cells,
        aggs,
        VarianceResults { diagnostics: rows, steps_to_target: steps },
        &out.wall_ms,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_noise_has_no_inner_variance() {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Variance);
        cfg.variance.n_mc = 1000;
        cfg.dataset.n = 200;
        let r = diagnose(&cfg, NoiseCase::Exact, 0).unwrap();
        assert!(r.sigma_g2 <= 1e-20 && r.zeta_g2 <= 1e-20, "{r:?}");
        let s = diagnose(&cfg, NoiseCase::Shift(1.0), 0).unwrap();
        assert!(s.sigma_g2 > 1e-3);
    }
}
