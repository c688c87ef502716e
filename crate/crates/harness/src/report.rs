//! Run summaries: per-cell records and per-group aggregates.

use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::io::{write_json, write_rows};
use crate::train::CellStatus;

/// Final record of one (method, dataset, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: String,
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub steps: u64,
    #[serde(flatten)]
    pub status: CellStatus,
    pub clip_events: u64,
    pub final_mse: Option<f64>,
    pub mmd2: Option<f64>,
    pub frechet2: Option<f64>,
}

impl CellSummary {
    pub fn failed(&self) -> bool {
        matches!(self.status, CellStatus::Failed { .. })
    }
}

/// Mean and spread of one metric over the seeds of a group; failed cells
/// and missing values are excluded and counted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub method: String,
    pub dataset: String,
    pub metric: String,
    pub n_total: usize,
    pub n_effective: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub median: Option<f64>,
}

pub fn aggregate(cells: &[CellSummary], metric: &str, get: impl Fn(&CellSummary) -> Option<f64>) -> Vec<Aggregate> {
    let mut groups: Vec<(String, String)> = Vec::new();
    for c in cells {
        let key = (c.method.clone(), c.dataset.clone());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    groups
        .into_iter()
        .map(|(method, dataset)| {
            let members: Vec<&CellSummary> =
                cells.iter().filter(|c| c.method == method && c.dataset == dataset).collect();
            let vals: Vec<f64> =
                members.iter().filter(|c| !c.failed()).filter_map(|c| get(c)).filter(|v| v.is_finite()).collect();
            let (mean, std) = mean_std(&vals);
            Aggregate {
                method,
                dataset,
                metric: metric.into(),
                n_total: members.len(),
                n_effective: vals.len(),
                mean,
                std,
                median: median(&vals),
            }
        })
        .collect()
}

pub fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 { Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()) } else { None };
    (Some(m), s)
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    Some(if k % 2 == 1 { s[k / 2] } else { 0.5 * (s[k / 2 - 1] + s[k / 2]) })
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a, E: Serialize> {
    pub experiment: &'static str,
    pub config_hash: String,
    pub config: &'a ExperimentConfig,
    pub cells: &'a [CellSummary],
    pub aggregates: Vec<Aggregate>,
    /// Experiment-specific results.
    pub results: E,
}

#[derive(Debug, Clone, Serialize)]
struct TimingRow<'a> {
    cell: &'a str,
    steps: u64,
    wall_ms: f64,
}

/// Writes `summary.json` and the wall-clock side file `timing.csv`. Timings
/// are kept out of the traces so that those stay byte-reproducible.
pub fn write_summary<E: Serialize>(
    dir: &Path,
    cfg: &ExperimentConfig,
    cells: &[CellSummary],
    aggregates: Vec<Aggregate>,
    results: E,
    wall_ms: &[f64],
) -> Result<()> {
    let hash = cfg.hash();
    let summary = Summary {
        experiment: cfg.experiment.name(),
        config_hash: hash.clone(),
        config: cfg,
        cells,
        aggregates,
        results,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    let timing: Vec<TimingRow> =
        cells.iter().zip(wall_ms).map(|(c, &w)| TimingRow { cell: &c.cell, steps: c.steps, wall_ms: w }).collect();
    write_rows(&dir.join("timing.csv"), &hash, &timing)
}
