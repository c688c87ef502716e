//! One training cell: a method, a model, a dataset and a seed, stepped under
//! a shared budget.

use std::time::Instant;

use meco_core::noise::{fit_gaussian, EmpiricalConvolution, FittedGaussian, Mixture, ModelGaussianNoise};
use meco_core::objectives::{
    cd_grad, ence_loss_and_grad, mcmc_mle_grad, nce_loss_and_grad, score_matching_loss_and_grad, BaselineConfig,
    NceParams, PersistentPool,
};
use meco_core::optim::{adam_step, meco_estimators, ngd_step, sgd_step, AdamConfig, AdamState, MecoState, PlSchedule};
use meco_core::sampling::LangevinConfig;
use meco_core::{DenseArray, Layout, NoiseDistribution, ParamVector, RngStream, UnnormalizedModel};
use serde::Serialize;

use crate::config::{Budget, MethodSpec, NoiseSpec, Objective, OptimizerKind, ScheduleSpec};
use crate::error::{HarnessError, Result};
use crate::io::TraceRow;

pub type BoxedNoise = Box<dyn NoiseDistribution + Send + Sync>;

/// A noise distribution as used during training.
pub enum NoiseRuntime {
    Fixed(BoxedNoise),
    /// `N(θ, I)` at the current parameters (Gaussian mean model only).
    ModelExact,
}

impl NoiseRuntime {
    pub fn build(spec: &NoiseSpec, train: &DenseArray) -> Result<Self> {
        Ok(match spec {
            NoiseSpec::ModelExact => NoiseRuntime::ModelExact,
            other => NoiseRuntime::Fixed(build_fixed(other, train)?),
        })
    }

    /// Runs `f` with the distribution in effect at `theta`.
    pub fn with<R>(&self, theta: &ParamVector, f: impl FnOnce(&dyn NoiseDistribution) -> R) -> R {
        match self {
            NoiseRuntime::Fixed(q) => f(q.as_ref()),
            NoiseRuntime::ModelExact => f(&ModelGaussianNoise::new(theta.values())),
        }
    }
}

fn build_fixed(spec: &NoiseSpec, train: &DenseArray) -> Result<BoxedNoise> {
    Ok(match spec {
        NoiseSpec::FittedGaussian { jitter } => Box::new(fit_gaussian(train, *jitter)?),
        NoiseSpec::Gaussian { mean, var } => {
            if mean.len() != train.cols() {
                return Err(HarnessError::Config(format!(
                    "noise mean has {} entries but the data has {} columns",
                    mean.len(),
                    train.cols()
                )));
            }
            Box::new(FittedGaussian::isotropic(mean.clone(), *var)?)
        }
        NoiseSpec::EmpiricalConv { kernel_std, batch_size } => {
            Box::new(EmpiricalConvolution::new(train.clone(), *kernel_std, *batch_size)?)
        }
        NoiseSpec::Mixture { components } => {
            let parts =
                components.iter().map(|c| Ok((c.weight, build_fixed(&c.noise, train)?))).collect::<Result<Vec<_>>>()?;
            Box::new(Mixture::new(parts)?)
        }
        NoiseSpec::ModelExact => {
            return Err(HarnessError::Config("model_exact noise cannot be a mixture component".into()))
        }
    })
}

/// Stable per-label RNG stream so methods do not share randomness and adding
/// a method does not perturb the others.
pub fn method_stream(label: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    0x1_0000_0000 | (h & 0xffff_ffff)
}

/// Quantities logged after one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOut {
    pub loss_proxy: f64,
    pub grad_norm: f64,
    pub log_u: f64,
}

enum OptState {
    Plain,
    Adam(AdamState, AdamConfig),
}

/// Mutable state of one method being trained.
pub struct Cell<'a, M: UnnormalizedModel + ?Sized> {
    model: &'a M,
    data: &'a DenseArray,
    spec: MethodSpec,
    objective: Objective,
    optimizer: OptimizerKind,
    pub theta: ParamVector,
    /// Log-partition estimate of the NCE family.
    pub alpha: f64,
    pub meco: MecoState,
    schedule: Option<PlSchedule>,
    opt: OptState,
    pool: Option<PersistentPool>,
    noise: NoiseRuntime,
    langevin: LangevinConfig,
    rng: RngStream,
    /// MECO floor activations, eNCE exponent clips and chain resets.
    pub clip_events: u64,
}

impl<'a, M: UnnormalizedModel + ?Sized> Cell<'a, M> {
    pub fn new(
        model: &'a M,
        data: &'a DenseArray,
        spec: &MethodSpec,
        noise: NoiseRuntime,
        theta: ParamVector,
        mut rng: RngStream,
    ) -> Result<Self> {
        let (objective, optimizer) = spec.resolve()?;
        if objective == Objective::MleClosedForm {
            return Err(HarnessError::Config("mle_closed_form is not an iterative method".into()));
        }
        if matches!(objective, Objective::Cd | Objective::Mcmc) {
            BaselineConfig {
                noise_ratio: spec.noise_ratio,
                langevin_steps: spec.langevin_steps,
                langevin_step_size: spec.langevin_step_size,
                batch_size: spec.batch_data,
            }
            .validate()?;
        }
        let uses_alpha = matches!(objective, Objective::Nce | Objective::Ence);
        let n_opt = theta.len() + usize::from(uses_alpha);
        let opt = match optimizer {
            OptimizerKind::Adam => OptState::Adam(
                AdamState::new(n_opt),
                AdamConfig { beta1: spec.adam_beta1, beta2: spec.adam_beta2, eps: spec.adam_eps },
            ),
            _ => OptState::Plain,
        };
        let schedule = match spec.schedule {
            ScheduleSpec::Constant => None,
            ScheduleSpec::Pl { mu, eta0, coupling } => Some(PlSchedule::new(mu, eta0, coupling)),
        };
        let pool = if objective == Objective::Mcmc && spec.persistent {
            Some(noise.with(&theta, |q| PersistentPool::new(q, spec.batch_data, &mut rng)))
        } else {
            None
        };
        Ok(Self {
            model,
            data,
            spec: spec.clone(),
            objective,
            optimizer,
            meco: MecoState::fresh(theta.len()),
            theta,
            alpha: 0.0,
            schedule,
            opt,
            pool,
            noise,
            langevin: LangevinConfig::new(spec.langevin_steps, spec.langevin_step_size),
            rng,
            clip_events: 0,
        })
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    fn batch(&mut self) -> DenseArray {
        let idx = self.rng.indices(self.data.rows(), self.spec.batch_data);
        self.data.select_rows(&idx)
    }

    /// `(η, γ, β)` for this step.
    fn sizes(&mut self) -> (f64, f64, f64) {
        match &mut self.schedule {
            Some(s) => {
                let z = s.next_sizes();
                (z.eta, z.gamma, z.beta)
            }
            None => (self.spec.eta, self.spec.gamma, self.spec.beta),
        }
    }

    /// Moves `values` along `-dir` with the configured optimizer.
    fn update(&mut self, values: &mut ParamVector, dir: &[f64], eta: f64) {
        match (&mut self.opt, self.optimizer) {
            (OptState::Adam(st, cfg), _) => adam_step(st, values, dir, eta, cfg),
            (_, OptimizerKind::Ngd) => ngd_step(values, dir, eta, self.spec.ngd_floor),
            _ => sgd_step(values, dir, eta),
        }
    }

    /// Updates `θ` (and `α`) along the joint direction.
    fn update_joint(&mut self, grad_theta: &[f64], grad_alpha: f64, eta: f64) {
        let mut vals = self.theta.values().to_vec();
        vals.push(self.alpha);
        let mut dir = grad_theta.to_vec();
        dir.push(grad_alpha);
        let n = vals.len();
        let mut joint = ParamVector::zeros(Layout::new([("tau", vec![n])]));
        joint.values_mut().copy_from_slice(&vals);
        self.update(&mut joint, &dir, eta);
        let v = joint.values();
        self.theta.values_mut().copy_from_slice(&v[..n - 1]);
        self.alpha = v[n - 1];
    }

    pub fn step(&mut self) -> Result<StepOut> {
        let (eta, gamma, beta) = self.sizes();
        let data = self.batch();
        let out = match self.objective {
            Objective::Meco => {
                let nb = self.spec.batch_noise();
                let rng = &mut self.rng;
                let (noise, lq) = self.noise.with(&self.theta, |q| q.sample_with_log_density(rng, nb));
                let before = self.meco.clip_events;
                let info = meco_estimators(
                    &mut self.meco,
                    self.model,
                    &self.theta,
                    &data,
                    &noise,
                    &lq,
                    gamma,
                    beta,
                    self.spec.u_min.ln(),
                )?;
                self.clip_events += self.meco.clip_events - before;
                let v = std::mem::take(&mut self.meco.v);
                let mut theta = self.theta.clone();
                self.update(&mut theta, &v, eta);
                self.theta = theta;
                self.meco.v = v;
                StepOut { loss_proxy: info.loss_proxy, grad_norm: info.v_norm, log_u: info.log_u }
            }
            Objective::Nce | Objective::Ence => {
                let nb = self.spec.batch_noise();
                let tau = NceParams { theta: self.theta.clone(), alpha: self.alpha };
                let rng = &mut self.rng;
                let (model, objective) = (self.model, self.objective);
                let val = self.noise.with(&self.theta, |q| {
                    let noise = q.sample(rng, nb);
                    if objective == Objective::Nce {
                        nce_loss_and_grad(model, &tau, q, &data, &noise)
                    } else {
                        ence_loss_and_grad(model, &tau, q, &data, &noise)
                    }
                })?;
                self.clip_events += val.clip_events as u64;
                let gn = (norm2(&val.grad_theta) + val.grad_alpha * val.grad_alpha).sqrt();
                self.update_joint(&val.grad_theta, val.grad_alpha, eta);
                StepOut { loss_proxy: val.loss, grad_norm: gn, log_u: f64::NAN }
            }
            Objective::Cd | Objective::Mcmc => {
                let cg = if self.objective == Objective::Cd {
                    cd_grad(self.model, &self.theta, &data, &self.langevin, &mut self.rng)?
                } else {
                    let (model, theta, langevin) = (self.model, &self.theta, &self.langevin);
                    let (rng, pool) = (&mut self.rng, self.pool.as_mut());
                    self.noise.with(theta, |q| mcmc_mle_grad(model, theta, &data, q, langevin, pool, rng))?
                };
                self.clip_events += cg.resets as u64;
                let gn = norm2(&cg.grad).sqrt();
                let mut theta = self.theta.clone();
                self.update(&mut theta, &cg.grad, eta);
                self.theta = theta;
                StepOut { loss_proxy: f64::NAN, grad_norm: gn, log_u: f64::NAN }
            }
            Objective::ScoreMatching => {
                let val = score_matching_loss_and_grad(self.model, &self.theta, &data)?;
                let gn = norm2(&val.grad_theta).sqrt();
                let mut theta = self.theta.clone();
                self.update(&mut theta, &val.grad_theta, eta);
                self.theta = theta;
                StepOut { loss_proxy: val.loss, grad_norm: gn, log_u: f64::NAN }
            }
            Objective::MleClosedForm => unreachable!("rejected in Cell::new"),
        };
        if !self.theta.is_finite() || !self.alpha.is_finite() {
            return Err(HarnessError::Core(meco_core::Error::Input("parameters became non-finite".into())));
        }
        Ok(out)
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Completed,
    Failed { step: u64, reason: String },
}

/// Trace plus bookkeeping of one finished cell.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub rows: Vec<TraceRow>,
    pub steps: u64,
    pub status: CellStatus,
    pub wall_ms: f64,
}

/// Steps until either budget limit is hit, checking both before every step.
/// `mse` maps the current parameters to the trace's `mse` column. Rows are
/// written at step 0, every `trace_every` steps and at the last step.
pub fn run_budget<M: UnnormalizedModel + ?Sized>(
    cell: &mut Cell<'_, M>,
    budget: &Budget,
    trace_every: u64,
    mse: impl Fn(&ParamVector) -> f64,
) -> CellRun {
    let start = Instant::now();
    let every = trace_every.max(1);
    let mut rows = vec![TraceRow {
        step: 0,
        mse: mse(&cell.theta),
        loss_proxy: f64::NAN,
        grad_norm: f64::NAN,
        log_u: f64::NAN,
        clip_events: 0,
    }];
    let mut step = 0u64;
    let mut pending = None;
    let status = loop {
        if budget.max_steps.is_some_and(|m| step >= m)
            || budget.wall_secs.is_some_and(|w| start.elapsed().as_secs_f64() >= w)
        {
            break CellStatus::Completed;
        }
        match cell.step() {
            Ok(out) => {
                step += 1;
                let row = TraceRow {
                    step,
                    mse: mse(&cell.theta),
                    loss_proxy: out.loss_proxy,
                    grad_norm: out.grad_norm,
                    log_u: out.log_u,
                    clip_events: cell.clip_events,
                };
                if step.is_multiple_of(every) {
                    rows.push(row);
                    pending = None;
                } else {
                    pending = Some(row);
                }
            }
            Err(e) => {
                break CellStatus::Failed { step: step + 1, reason: e.to_string() };
            }
        }
    };
    rows.extend(pending);
    CellRun { rows, steps: step, status, wall_ms: start.elapsed().as_secs_f64() * 1e3 }
}

/// Runs `f(i)` for `i in 0..n` on `workers` threads; results keep index order.
pub fn run_parallel<T: Send>(workers: Option<usize>, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    match builder.build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use meco_core::GaussianMeanModel;

    fn data() -> DenseArray {
        let mut r = RngStream::new(1, 0);
        let xs: Vec<f64> = (0..500).map(|_| 2.0 + r.normal()).collect();
        DenseArray::matrix(500, 1, xs)
    }

    fn run(spec: &MethodSpec, noise: NoiseSpec, steps: u64) -> (CellRun, f64) {
        let m = GaussianMeanModel::scalar();
        let d = data();
        let q = NoiseRuntime::build(&noise, &d).unwrap();
        let mut c = Cell::new(&m, &d, spec, q, m.params(&[0.0]), RngStream::new(3, 9)).unwrap();
        let budget = Budget { max_steps: Some(steps), wall_secs: None };
        let r = run_budget(&mut c, &budget, 1, |t| (t.values()[0] - 2.0).powi(2));
        (r, c.theta.values()[0])
    }

    #[test]
    fn every_method_moves_toward_the_mean() {
        let fitted = NoiseSpec::FittedGaussian { jitter: 1e-6 };
        for (name, eta) in [
            ("meco", 0.05),
            ("nce_sgd", 0.2),
            ("nce_ngd", 0.02),
            ("nce_adam", 0.02),
            ("ence_ngd", 0.02),
            ("cd", 0.5),
            ("mcmc", 0.05),
            ("score_matching", 0.05),
        ] {
            let spec = MethodSpec { batch_data: 16, langevin_step_size: 0.1, ..MethodSpec::named(name, eta) };
            let (r, th) = run(&spec, fitted.clone(), 400);
            assert_eq!(r.status, CellStatus::Completed, "{name}");
            assert_eq!(r.rows.len(), 401);
            assert!((th - 2.0).abs() < 0.5, "{name}: θ = {th}");
        }
    }

    #[test]
    fn zero_steps_gives_only_the_initial_row() {
        let (r, _) = run(&MethodSpec::named("meco", 0.1), NoiseSpec::ModelExact, 0);
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].mse, 4.0);
    }

    #[test]
    fn sparse_trace_keeps_last_step() {
        let m = GaussianMeanModel::scalar();
        let d = data();
        let q = NoiseRuntime::build(&NoiseSpec::ModelExact, &d).unwrap();
        let mut c =
            Cell::new(&m, &d, &MethodSpec::named("meco", 0.1), q, m.params(&[0.0]), RngStream::new(0, 0)).unwrap();
        let r = run_budget(&mut c, &Budget { max_steps: Some(25), wall_secs: None }, 10, |_| 0.0);
        let steps: Vec<u64> = r.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 25]);
    }

    #[test]
    fn divergence_is_reported_not_panicking() {
        let spec = MethodSpec::named("score_matching", 1e300);
        let (r, _) = run(&spec, NoiseSpec::Gaussian { mean: vec![0.0], var: 1.0 }, 50);
        assert!(matches!(r.status, CellStatus::Failed { .. }));
    }

    #[test]
    fn method_streams_differ() {
        assert_ne!(method_stream("meco"), method_stream("nce_sgd"));
        assert_eq!(method_stream("cd"), method_stream("cd"));
    }
}
