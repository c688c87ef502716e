//! The 1-D Gaussian mean-estimation race: every method starts from θ = 0
//! and is scored by `‖θ − θ*‖²` after each step.

use meco_core::{GaussianMeanModel, RngStream};
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, Objective};
use crate::error::{HarnessError, Result};
use crate::io::{create_dir, write_trace, TraceRow};
use crate::report::{aggregate, write_summary, CellSummary};
use crate::train::{method_stream, run_budget, run_parallel, Cell, CellRun, CellStatus, NoiseRuntime};
use crate::{dataset, Split};

/// Objectives that make sense on the Gaussian model race.
const RACE_OBJECTIVES: [Objective; 6] = [
    Objective::Meco,
    Objective::Nce,
    Objective::Ence,
    Objective::Mcmc,
    Objective::ScoreMatching,
    Objective::MleClosedForm,
];

#[derive(Debug, Clone)]
pub struct RaceCell {
    pub summary: CellSummary,
    pub trace: Vec<TraceRow>,
    pub wall_ms: f64,
}

pub struct RaceReport {
    pub cells: Vec<RaceCell>,
}

impl RaceReport {
    /// Final MSE of `label` for each seed, in seed order.
    pub fn final_mse(&self, label: &str) -> Vec<Option<f64>> {
        self.cells.iter().filter(|c| c.summary.method == label).map(|c| c.summary.final_mse).collect()
    }
}

/// The running sample mean: after `t` of `total` steps, θ is the mean of
/// the first `⌈t·n/total⌉` points.
fn closed_form_trace(data: &[f64], total: u64, theta_star: f64, every: u64) -> Vec<TraceRow> {
    let n = data.len() as u64;
    let mut rows = Vec::new();
    let mut sum = 0.0;
    let mut used = 0u64;
    for t in 0..=total {
        let want = if total == 0 { 0 } else { (t * n).div_ceil(total).min(n) };
        while used < want {
            sum += data[used as usize];
            used += 1;
        }
        let theta = if used == 0 { 0.0 } else { sum / used as f64 };
        if t.is_multiple_of(every.max(1)) || t == total {
            rows.push(TraceRow {
                step: t,
                mse: (theta - theta_star).powi(2),
                loss_proxy: f64::NAN,
                grad_norm: f64::NAN,
                log_u: f64::NAN,
                clip_events: 0,
            });
        }
    }
    rows
}

pub fn run_gaussian1d(cfg: &ExperimentConfig) -> Result<RaceReport> {
    if cfg.experiment != ExperimentKind::Gaussian1d {
        return Err(HarnessError::Config("run_gaussian1d needs a gaussian1d config".into()));
    }
    for m in &cfg.methods {
        let (obj, _) = m.resolve()?;
        if !RACE_OBJECTIVES.contains(&obj) {
            return Err(HarnessError::Config(format!("method `{}` is not available in gaussian1d", m.method)));
        }
    }
    let datasets = cfg.seeds.iter().map(|&s| dataset(cfg, s, Split::Train)).collect::<Result<Vec<_>>>()?;
    let model = GaussianMeanModel::scalar();
    let theta_star = cfg.dataset.theta_star;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.seeds.len()).flat_map(|s| (0..cfg.methods.len()).map(move |m| (s, m))).collect();

    let results = run_parallel(cfg.workers, jobs.len(), |j| -> Result<RaceCell> {
        let (si, mi) = jobs[j];
        let (seed, spec) = (cfg.seeds[si], &cfg.methods[mi]);
        let data = &datasets[si];
        let (obj, _) = spec.resolve()?;
        let run = if obj == Objective::MleClosedForm {
            let total = cfg.budget.max_steps.unwrap_or((data.rows() as u64).div_ceil(spec.batch_data as u64));
            let rows = closed_form_trace(data.data(), total, theta_star, cfg.trace_every);
            CellRun { rows, steps: total, status: CellStatus::Completed, wall_ms: 0.0 }
        } else {
            let noise = NoiseRuntime::build(spec.noise.as_ref().unwrap_or(&cfg.noise), data)?;
            let rng = RngStream::new(seed, method_stream(spec.label()));
            let mut cell = Cell::new(&model, data, spec, noise, model.params(&[0.0]), rng)?;
            run_budget(&mut cell, &cfg.budget, cfg.trace_every, |t| (t.values()[0] - theta_star).powi(2))
        };
        let last = run.rows.last().expect("trace has the initial row");
        let summary = CellSummary {
            cell: format!("{}_s{seed}", spec.label()),
            method: spec.label().into(),
            dataset: cfg.dataset.name.clone(),
            seed,
            steps: run.steps,
            clip_events: last.clip_events,
            final_mse: Some(last.mse),
            status: run.status,
            mmd2: None,
            frechet2: None,
        };
        Ok(RaceCell { summary, trace: run.rows, wall_ms: run.wall_ms })
    });
    Ok(RaceReport { cells: results.into_iter().collect::<Result<Vec<_>>>()? })
}

/// Seeds in which `a` ended strictly below `b`.
pub fn wins(report: &RaceReport, a: &str, b: &str) -> usize {
    report
        .final_mse(a)
        .iter()
        .zip(report.final_mse(b))
        .filter(|(x, y)| matches!((x, y), (Some(x), Some(y)) if x < y))
        .count()
}

#[derive(Serialize)]
struct RaceResults {
    /// Seeds (of all) in which MECO beats each baseline on final MSE.
    meco_wins: Vec<(String, usize)>,
}

pub fn write_gaussian1d(cfg: &ExperimentConfig, report: &RaceReport) -> Result<()> {
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let hash = cfg.hash();
    for c in &report.cells {
        write_trace(&dir.join(format!("trace_{}.csv", c.summary.cell)), &hash, &c.trace)?;
    }
    let cells: Vec<CellSummary> = report.cells.iter().map(|c| c.summary.clone()).collect();
    let wall: Vec<f64> = report.cells.iter().map(|c| c.wall_ms).collect();
    let aggs = aggregate(&cells, "final_mse", |c| c.final_mse);
    let meco_wins = if cfg.methods.iter().any(|m| m.label() == "meco") {
        cfg.methods
            .iter()
            .filter(|m| m.label() != "meco")
            .map(|m| (m.label().to_string(), wins(report, "meco", m.label())))
            .collect()
    } else {
        Vec::new()
    };
    write_summary(dir, cfg, &cells, aggs, RaceResults { meco_wins }, &wall)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_uses_all_points_at_the_end() {
        let data = [1.0, 2.0, 3.0, 4.0];
        let rows = closed_form_trace(&data, 2, 0.0, 1);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].mse, 0.0);
        assert_eq!(rows[1].mse, 1.5f64.powi(2));
        assert_eq!(rows[2].mse, 2.5f64.powi(2));
    }

    #[test]
    fn zero_step_budget_keeps_initial_row() {
        let rows = closed_form_trace(&[1.0], 0, 16.0, 1);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mse, 256.0);
    }
}
