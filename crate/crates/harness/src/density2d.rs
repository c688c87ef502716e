//! 2-D density estimation with an MLP energy: train each method under the
//! same budget, then compare generated samples with held-out data by MMD
//! and the Fréchet distance.

use meco_core::metrics::{
    frechet2, median_pairwise_distance, mmd2, Bandwidth, GaussianSummary, MmdConfig, MmdEstimator,
};
use meco_core::model::MlpEnergyModel;
use meco_core::sampling::{langevin_chain, LangevinConfig};
use meco_core::{DenseArray, ParamVector, RngStream, UnnormalizedModel};
use serde::Serialize;

use crate::config::{EvalConfig, ExperimentConfig, ExperimentKind, NoiseSpec, SamplerKind};
use crate::error::{HarnessError, Result};
use crate::io::{create_dir, write_checkpoint, write_points, write_rows, write_trace, TraceRow};
use crate::report::{aggregate, write_summary, CellSummary};
use crate::train::{method_stream, run_budget, run_parallel, Cell, CellStatus, NoiseRuntime};
use crate::{dataset, Split};

/// Stream for the initial parameters, shared by every method of a seed.
const INIT_STREAM: u64 = 0x1417;
/// XOR-ed into a method stream for its evaluation sampler.
const EVAL_STREAM: u64 = 0xE7A1_0000_0000;

pub fn build_model(cfg: &ExperimentConfig, dim: usize) -> MlpEnergyModel {
    MlpEnergyModel::new(dim, &cfg.model.hidden, cfg.model.activation.into())
}

pub fn init_params(model: &MlpEnergyModel, seed: u64) -> ParamVector {
    model.init_params(&mut RngStream::new(seed, INIT_STREAM))
}

/// `f₀` on the cell centres of a `k × k` grid over `[−h, h]²`, row-major
/// with x varying fastest.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub size: usize,
    pub half_width: f64,
    pub points: DenseArray,
    pub log_p0: Vec<f64>,
}

impl DensityGrid {
    pub fn evaluate<M: UnnormalizedModel + ?Sized>(
        model: &M,
        theta: &ParamVector,
        size: usize,
        half_width: f64,
    ) -> Self {
        let h = 2.0 * half_width / size as f64;
        let mut pts = Vec::with_capacity(2 * size * size);
        for iy in 0..size {
            for ix in 0..size {
                pts.push(-half_width + h * (ix as f64 + 0.5));
                pts.push(-half_width + h * (iy as f64 + 0.5));
            }
        }
        let points = DenseArray::matrix(size * size, 2, pts);
        let log_p0 = model.log_unnorm(theta, &points);
        Self { size, half_width, points, log_p0 }
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.half_width / self.size as f64
    }

    /// Exact draws from the piecewise-constant density on the grid: a cell
    /// by its normalized `e^{f₀}` mass, then a uniform point inside it.
    pub fn sample(&self, rng: &mut RngStream, count: usize) -> Result<DenseArray> {
        let m = self.log_p0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(HarnessError::Core(meco_core::Error::Input("non-finite energy on the grid".into())));
        }
        let mut cum = Vec::with_capacity(self.log_p0.len());
        let mut acc = 0.0;
        for &l in &self.log_p0 {
            acc += (l - m).exp();
            cum.push(acc);
        }
        let h = self.cell_width();
        let mut out = Vec::with_capacity(2 * count);
        for _ in 0..count {
            let u = rng.uniform() * acc;
            let i = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
            let c = self.points.row(i);
            out.push(c[0] + h * (rng.uniform() - 0.5));
            out.push(c[1] + h * (rng.uniform() - 0.5));
        }
        Ok(DenseArray::matrix(count, 2, out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridRow {
    pub x: f64,
    pub y: f64,
    pub log_p0: f64,
}

/// Model samples for evaluation.
pub fn generate_samples<M: UnnormalizedModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    eval: &EvalConfig,
    grid: Option<&DensityGrid>,
    rng: &mut RngStream,
) -> Result<DenseArray> {
    match eval.sampler {
        SamplerKind::Grid => {
            let owned;
            let g = match grid {
                Some(g) => g,
                None => {
                    owned = DensityGrid::evaluate(model, theta, eval.grid_size, eval.grid_half_width);
                    &owned
                }
            };
            g.sample(rng, eval.n_samples)
        }
        SamplerKind::Langevin => {
            let x0 = rng.normal_batch(eval.n_samples, model.dim()).map(|v| v * eval.init_std);
            let lc = LangevinConfig {
                clamp_box: Some((-eval.grid_half_width, eval.grid_half_width)),
                ..LangevinConfig::new(eval.langevin_steps, eval.langevin_step_size)
            };
            Ok(langevin_chain(model, theta, &x0, &lc, rng)?)
        }
    }
}

/// MMD bandwidth: fixed, or the median pairwise distance of the first
/// `bandwidth_points` held-out points.
pub fn bandwidth(eval: &EvalConfig, test: &DenseArray) -> Result<f64> {
    match eval.mmd_bandwidth {
        Some(b) => Ok(b),
        None => {
            let k = eval.bandwidth_points.min(test.rows());
            let idx: Vec<usize> = (0..k).collect();
            Ok(median_pairwise_distance(&test.select_rows(&idx))?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleScores {
    pub mmd2: f64,
    pub frechet2: f64,
}

pub fn score(samples: &DenseArray, test: &DenseArray, eval: &EvalConfig, bw: f64) -> Result<SampleScores> {
    let estimator = if eval.unbiased_mmd { MmdEstimator::Unbiased } else { MmdEstimator::Biased };
    let mmd = mmd2(samples, test, &MmdConfig { bandwidth: Bandwidth::Fixed(bw), estimator })?;
    let fr = frechet2(&GaussianSummary::fit(samples)?, &GaussianSummary::fit(test)?)?;
    Ok(SampleScores { mmd2: mmd, frechet2: fr })
}

#[derive(Debug, Clone)]
pub struct DensityCell {
    pub summary: CellSummary,
    pub trace: Vec<TraceRow>,
    pub wall_ms: f64,
    pub theta: ParamVector,
    pub alpha: f64,
    pub grid: Option<DensityGrid>,
    pub samples: Option<DenseArray>,
    pub bandwidth: f64,
}

pub struct DensityReport {
    pub cells: Vec<DensityCell>,
}

impl DensityReport {
    /// Mean MMD² of a method over its successful seeds.
    pub fn mean_mmd(&self, label: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.summary.method == label && !c.summary.failed())
            .filter_map(|c| c.summary.mmd2)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn run_density2d(cfg: &ExperimentConfig) -> Result<DensityReport> {
    if cfg.experiment != ExperimentKind::Density2d {
        return Err(HarnessError::Config("run_density2d needs a density2d config".into()));
    }
    for m in &cfg.methods {
        if matches!(m.noise.as_ref().unwrap_or(&cfg.noise), NoiseSpec::ModelExact) {
            return Err(HarnessError::Config("model_exact noise needs the Gaussian model".into()));
        }
        if m.resolve()?.0 == crate::config::Objective::MleClosedForm {
            return Err(HarnessError::Config("mle_closed_form has no density2d counterpart".into()));
        }
    }
    let train = cfg.seeds.iter().map(|&s| dataset(cfg, s, Split::Train)).collect::<Result<Vec<_>>>()?;
    let test = cfg.seeds.iter().map(|&s| dataset(cfg, s, Split::Test)).collect::<Result<Vec<_>>>()?;
    let bws = test.iter().map(|t| bandwidth(&cfg.eval, t)).collect::<Result<Vec<_>>>()?;
    let dim = train[0].cols();
    let model = build_model(cfg, dim);
    let jobs: Vec<(usize, usize)> =
        (0..cfg.seeds.len()).flat_map(|s| (0..cfg.methods.len()).map(move |m| (s, m))).collect();
    let results = run_parallel(cfg.workers, jobs.len(), |j| -> Result<DensityCell> {
        let (si, mi) = jobs[j];
        let (seed, spec) = (cfg.seeds[si], &cfg.methods[mi]);
        let noise = NoiseRuntime::build(spec.noise.as_ref().unwrap_or(&cfg.noise), &train[si])?;
        let stream = method_stream(spec.label());
        let theta0 = init_params(&model, seed);
        let mut cell = Cell::new(&model, &train[si], spec, noise, theta0, RngStream::new(seed, stream))?;
        let run = run_budget(&mut cell, &cfg.budget, cfg.trace_every, |_| f64::NAN);
        let mut summary = CellSummary {
            cell: format!("{}_{}_s{seed}", cfg.dataset.name, spec.label()),
            method: spec.label().into(),
            dataset: cfg.dataset.name.clone(),
            seed,
            steps: run.steps,
            clip_events: cell.clip_events,
            final_mse: None,
            status: run.status,
            mmd2: None,
            frechet2: None,
        };
        let mut grid = None;
        let mut samples = None;
        if !summary.failed() {
            let needs_grid = cfg.eval.write_grid || cfg.eval.sampler == SamplerKind::Grid;
            let g = needs_grid
                .then(|| DensityGrid::evaluate(&model, &cell.theta, cfg.eval.grid_size, cfg.eval.grid_half_width));
            let mut rng = RngStream::new(seed, stream ^ EVAL_STREAM);
            let scored = generate_samples(&model, &cell.theta, &cfg.eval, g.as_ref(), &mut rng)
                .and_then(|s| score(&s, &test[si], &cfg.eval, bws[si]).map(|sc| (s, sc)));
            match scored {
                Ok((s, sc)) => {
                    summary.mmd2 = Some(sc.mmd2);
                    summary.frechet2 = Some(sc.frechet2);
                    samples = Some(s);
                }
                Err(e) => summary.status = CellStatus::Failed { step: run.steps, reason: format!("evaluation: {e}") },
            }
            grid = g;
        }
        Ok(DensityCell {
            summary,
            trace: run.rows,
            wall_ms: run.wall_ms,
            theta: cell.theta.clone(),
            alpha: cell.alpha,
            grid,
            samples,
            bandwidth: bws[si],
        })
    });
    Ok(DensityReport { cells: results.into_iter().collect::<Result<Vec<_>>>()? })
}

#[derive(Serialize)]
struct DensityResults {
    /// Mean MMD² per method over successful seeds.
    mean_mmd2: Vec<(String, Option<f64>)>,
    bandwidths: Vec<(u64, f64)>,
}

pub fn write_density2d(cfg: &ExperimentConfig, report: &DensityReport) -> Result<()> {
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let hash = cfg.hash();
    for c in &report.cells {
        let name = &c.summary.cell;
        write_trace(&dir.join(format!("trace_{name}.csv")), &hash, &c.trace)?;
        if cfg.eval.write_grid {
            if let Some(g) = &c.grid {
                let rows: Vec<GridRow> = g
                    .points
                    .iter_rows()
                    .zip(&g.log_p0)
                    .map(|(p, &l)| GridRow { x: p[0], y: p[1], log_p0: l })
                    .collect();
                write_rows(&dir.join(format!("grid_{name}.csv")), &hash, &rows)?;
            }
        }
        if cfg.eval.write_samples {
            if let Some(s) = &c.samples {
                write_points(&dir.join(format!("samples_{name}.csv")), Some(&hash), s)?;
            }
        }
        if cfg.checkpoints {
            let mut extra = serde_json::Map::new();
            extra.insert("alpha".into(), serde_json::json!(c.alpha));
            extra.insert("steps".into(), serde_json::json!(c.summary.steps));
            write_checkpoint(&dir.join(format!("ckpt_{name}.bin")), &hash, &c.theta, extra)?;
        }
    }
    let cells: Vec<CellSummary> = report.cells.iter().map(|c| c.summary.clone()).collect();
    let wall: Vec<f64> = report.cells.iter().map(|c| c.wall_ms).collect();
    let mut aggs = aggregate(&cells, "mmd2", |c| c.mmd2);
    aggs.extend(aggregate(&cells, "frechet2", |c| c.frechet2));
    let mut labels: Vec<String> = Vec::new();
    for c in &cells {
        if !labels.contains(&c.method) {
            labels.push(c.method.clone());
        }
    }
    let mean_mmd2 = labels.iter().map(|l| (l.clone(), report.mean_mmd(l))).collect();
    let mut bandwidths: Vec<(u64, f64)> = report.cells.iter().map(|c| (c.summary.seed, c.bandwidth)).collect();
    bandwidths.dedup();
    write_summary(dir, cfg, &cells, aggs, DensityResults { mean_mmd2, bandwidths }, &wall)
}
