//! Experiment configuration.
//!
//! A config file is a single JSON document. It is deep-merged over the
//! built-in defaults of its `experiment` kind, so a file only needs the keys
//! it changes. Arrays (seeds, methods, deltas) replace the default wholesale.

use std::path::{Path, PathBuf};

use meco_core::objectives::BaselineConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Gaussian1d,
    Landscape,
    Variance,
    Density2d,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Gaussian1d => "gaussian1d",
            ExperimentKind::Landscape => "landscape",
            ExperimentKind::Variance => "variance",
            ExperimentKind::Density2d => "density2d",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    pub budget: Budget,
    pub output_dir: PathBuf,
    pub methods: Vec<MethodSpec>,
    pub dataset: DataConfig,
    pub noise: NoiseSpec,
    /// Energy network of the density benchmark.
    pub model: ModelConfig,
    pub eval: EvalConfig,
    pub landscape: LandscapeConfig,
    pub variance: VarianceConfig,
    /// Parallel cells; `None` uses every available core.
    pub workers: Option<usize>,
    pub checkpoints: bool,
    /// Trace row interval; the first and last step are always written.
    pub trace_every: u64,
}

/// Per-cell training budget; both limits are checked before every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub max_steps: Option<u64>,
    pub wall_secs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub name: String,
    /// Training points.
    pub n: usize,
    /// Held-out points for evaluation.
    pub n_test: usize,
    pub theta_star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Softplus,
    Tanh,
    Swish,
}

impl From<ActivationName> for meco_core::model::Activation {
    fn from(a: ActivationName) -> Self {
        use meco_core::model::Activation;
        match a {
            ActivationName::Softplus => Activation::Softplus,
            ActivationName::Tanh => Activation::Tanh,
            ActivationName::Swish => Activation::Swish,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: ActivationName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// Gaussian with mean and covariance fitted to the training set.
    FittedGaussian {
        jitter: f64,
    },
    /// Isotropic Gaussian with fixed parameters.
    Gaussian {
        mean: Vec<f64>,
        var: f64,
    },
    /// Training points plus Gaussian kernel noise; `batch_size` 0 evaluates
    /// the density over all anchors.
    EmpiricalConv {
        kernel_std: f64,
        batch_size: usize,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
    /// The exact normalized Gaussian model at the current θ.
    ModelExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Constant,
    /// PL schedule; `coupling` is the constant `c` in `γ = β = min(1, c·max(1,μ)·η)`.
    Pl {
        mu: f64,
        eta0: f64,
        coupling: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Ngd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Meco,
    Nce,
    Ence,
    Cd,
    Mcmc,
    ScoreMatching,
    MleClosedForm,
}

/// One training method. Fields a method does not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSpec {
    /// `meco`, `nce`/`nce_sgd`, `nce_ngd`, `nce_adam`, `ence`/`ence_ngd`,
    /// `ence_sgd`, `cd`, `mcmc`, `score_matching` or `mle_closed_form`.
    pub method: String,
    /// Cell-name prefix; defaults to `method`.
    pub label: Option<String>,
    /// Overrides the optimizer implied by `method`.
    pub optimizer: Option<OptimizerKind>,
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub schedule: ScheduleSpec,
    pub u_min: f64,
    pub batch_data: usize,
    /// Noise samples per data sample (NCE family; MECO when `batch_noise` is unset).
    pub noise_ratio: usize,
    pub batch_noise: Option<usize>,
    pub langevin_steps: usize,
    pub langevin_step_size: f64,
    pub persistent: bool,
    pub ngd_floor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Replaces the experiment-wide noise for this method.
    pub noise: Option<NoiseSpec>,
}

impl Default for MethodSpec {
    fn default() -> Self {
        Self {
            method: "meco".into(),
            label: None,
            optimizer: None,
            eta: 1e-3,
            gamma: 0.1,
            beta: 0.9,
            schedule: ScheduleSpec::Constant,
            u_min: 1e-8,
            batch_data: 64,
            noise_ratio: 1,
            batch_noise: None,
            langevin_steps: 20,
            langevin_step_size: 0.01,
            persistent: true,
            ngd_floor: 1e-12,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            noise: None,
        }
    }
}

impl MethodSpec {
    pub fn named(method: &str, eta: f64) -> Self {
        Self { method: method.into(), eta, ..Self::default() }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.method)
    }

    pub fn batch_noise(&self) -> usize {
        self.batch_noise.unwrap_or(self.noise_ratio * self.batch_data)
    }

    /// The objective and optimizer named by `method` (and `optimizer`).
    pub fn resolve(&self) -> Result<(Objective, OptimizerKind)> {
        use Objective::*;
        use OptimizerKind::*;
        let (obj, opt) = match self.method.as_str() {
            "meco" => (Meco, Sgd),
            "nce" | "nce_sgd" => (Nce, Sgd),
            "nce_ngd" => (Nce, Ngd),
            "nce_adam" => (Nce, Adam),
            "ence" | "ence_ngd" => (Ence, Ngd),
            "ence_sgd" => (Ence, Sgd),
            "cd" => (Cd, Sgd),
            "mcmc" => (Mcmc, Sgd),
            "score_matching" => (ScoreMatching, Sgd),
            "mle_closed_form" => (MleClosedForm, Sgd),
            other => return Err(HarnessError::Config(format!("unknown method `{other}`"))),
        };
        Ok((obj, self.optimizer.unwrap_or(opt)))
    }

    fn validate(&self) -> Result<()> {
        let (objective, _) = self.resolve()?;
        if matches!(objective, Objective::Cd | Objective::Mcmc) {
            BaselineConfig {
                noise_ratio: self.noise_ratio,
                langevin_steps: self.langevin_steps,
                langevin_step_size: self.langevin_step_size,
                batch_size: self.batch_data,
            }
            .validate()
            .map_err(|e| HarnessError::Config(format!("method `{}`: {e}", self.label())))?;
        }
        let bad = |m: &str| Err(HarnessError::Config(format!("method `{}`: {m}", self.label())));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0 && self.beta > 0.0 && self.beta <= 1.0) {
            return bad("gamma and beta must lie in (0, 1]");
        }
        if self.batch_data == 0 || self.noise_ratio == 0 || self.batch_noise() == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.u_min > 0.0) {
            return bad("u_min must be positive");
        }
        if !(self.langevin_step_size > 0.0) {
            return bad("langevin_step_size must be positive");
        }
        if let ScheduleSpec::Pl { mu, eta0, coupling } = self.schedule {
            if !(mu > 0.0 && eta0 > 0.0 && coupling > 0.0) {
                return bad("PL schedule needs positive mu, eta0 and coupling");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Langevin chains from a broad Gaussian.
    Langevin,
    /// Exact draws from the model density discretized on the evaluation grid.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub sampler: SamplerKind,
    pub langevin_steps: usize,
    pub langevin_step_size: f64,
    /// Standard deviation of the Gaussian the chains start from.
    pub init_std: f64,
    /// Cells per side of the density grid.
    pub grid_size: usize,
    /// Half-width of the square grid and of the Langevin clamp box.
    pub grid_half_width: f64,
    /// Fixed MMD bandwidth; `None` takes the median pairwise distance of the
    /// first `bandwidth_points` held-out points, shared by every method.
    pub mmd_bandwidth: Option<f64>,
    pub bandwidth_points: usize,
    pub unbiased_mmd: bool,
    pub write_samples: bool,
    pub write_grid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    pub theta_min: f64,
    pub theta_max: f64,
    pub points: usize,
    pub n_mc: usize,
    pub theta_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceConfig {
    /// Parameter at which the diagnostics are evaluated; also the data mean
    /// of the convergence runs.
    pub theta: f64,
    pub deltas: Vec<f64>,
    pub include_exact: bool,
    pub n_mc: usize,
    pub batch: usize,
    pub target_mse: f64,
    pub theta_init: f64,
}

impl ExperimentConfig {
    /// Built-in defaults for an experiment kind.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            seeds: (0..10).collect(),
            budget: Budget { max_steps: Some(4000), wall_secs: None },
            output_dir: PathBuf::from(format!("out/{}", kind.name())),
            methods: Vec::new(),
            dataset: DataConfig { name: "gaussian1d".into(), n: 100_000, n_test: 0, theta_star: 16.0 },
            noise: NoiseSpec::Gaussian { mean: vec![0.0], var: 1.0 },
            model: ModelConfig { hidden: vec![300, 300, 300], activation: ActivationName::Softplus },
            eval: EvalConfig {
                n_samples: 10_000,
                sampler: SamplerKind::Langevin,
                langevin_steps: 500,
                langevin_step_size: 0.01,
                init_std: 2.0,
                grid_size: 200,
                grid_half_width: 4.5,
                mmd_bandwidth: None,
                bandwidth_points: 1000,
                unbiased_mmd: false,
                write_samples: true,
                write_grid: true,
            },
            landscape: LandscapeConfig { theta_min: -4.0, theta_max: 36.0, points: 400, n_mc: 100_000, theta_q: 0.0 },
            variance: VarianceConfig {
                theta: 1.0,
                deltas: vec![0.0, 1.0, 2.0, 5.0],
                include_exact: true,
                n_mc: 100_000,
                batch: 1,
                target_mse: 0.01,
                theta_init: 0.0,
            },
            workers: None,
            checkpoints: true,
            trace_every: 1,
        };
        match kind {
            ExperimentKind::Gaussian1d => Self { methods: gaussian_race_methods(), ..base },
            ExperimentKind::Landscape => Self { seeds: vec![0], ..base },
            ExperimentKind::Variance => Self {
                seeds: (0..5).collect(),
                budget: Budget { max_steps: Some(2000), wall_secs: None },
                dataset: DataConfig { n: 10_000, theta_star: 1.0, ..base.dataset.clone() },
                methods: vec![MethodSpec { batch_data: 16, ..MethodSpec::named("meco", 0.05) }],
                ..base
            },
            ExperimentKind::Density2d => Self {
                seeds: (0..5).collect(),
                budget: Budget { max_steps: Some(200_000), wall_secs: Some(600.0) },
                dataset: DataConfig { name: "8gaussians".into(), n: 10_000, n_test: 10_000, theta_star: 0.0 },
                noise: NoiseSpec::FittedGaussian { jitter: 1e-6 },
                methods: density_methods(),
                ..base
            },
        }
    }

    /// Parses a config document, filling missing keys from the defaults of
    /// its `experiment`.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text)?;
        let kind: ExperimentKind = match user.get("experiment") {
            Some(k) => serde_json::from_value(k.clone())?,
            None => return Err(HarnessError::Config("config has no `experiment` key".into())),
        };
        Self::merged(kind, user)
    }

    /// Like [`ExperimentConfig::from_json`] for a document whose experiment
    /// kind is given separately (e.g. by the CLI subcommand).
    pub fn from_json_for(kind: ExperimentKind, text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text)?;
        if let Some(k) = user.get("experiment") {
            let k: ExperimentKind = serde_json::from_value(k.clone())?;
            if k != kind {
                return Err(HarnessError::Config(format!(
                    "config is for `{}` but `{}` was requested",
                    k.name(),
                    kind.name()
                )));
            }
        }
        Self::merged(kind, user)
    }

    fn merged(kind: ExperimentKind, user: Value) -> Result<Self> {
        let mut base = serde_json::to_value(Self::defaults(kind))?;
        merge(&mut base, user);
        let cfg: Self = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, kind: Option<ExperimentKind>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        match kind {
            Some(k) => Self::from_json_for(k, &text),
            None => Self::from_json(&text),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.budget.max_steps.is_none() && self.budget.wall_secs.is_none() {
            return bad("budget needs max_steps or wall_secs".into());
        }
        if let Some(w) = self.budget.wall_secs {
            if !(w > 0.0) {
                return bad("wall_secs must be positive".into());
            }
        }
        if self.dataset.name.parse::<meco_core::data::Dataset>().is_err() {
            return bad(format!("unknown dataset `{}`", self.dataset.name));
        }
        if self.dataset.n == 0 {
            return bad("dataset.n must be positive".into());
        }
        for m in &self.methods {
            m.validate()?;
        }
        let mut labels: Vec<&str> = self.methods.iter().map(|m| m.label()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("method labels must be unique".into());
        }
        match self.experiment {
            ExperimentKind::Gaussian1d | ExperimentKind::Variance if self.dataset.name != "gaussian1d" => {
                bad(format!("{} needs the gaussian1d dataset", self.experiment.name()))
            }
            ExperimentKind::Density2d if self.dataset.name == "gaussian1d" => {
                bad("density2d needs a 2-D dataset".into())
            }
            ExperimentKind::Landscape if self.landscape.points == 0 || self.landscape.n_mc < 2 => {
                bad("landscape needs at least one grid point and two Monte-Carlo samples".into())
            }
            ExperimentKind::Variance if self.variance.n_mc < 2 || self.variance.batch == 0 => {
                bad("variance needs n_mc >= 2 and a positive batch".into())
            }
            ExperimentKind::Density2d if self.dataset.n_test < 2 || self.eval.grid_size == 0 => {
                bad("density2d needs n_test >= 2 and a positive grid size".into())
            }
            _ => Ok(()),
        }
    }

    /// Hex SHA-256 (first 16 characters) of the canonical JSON form,
    /// leaving out the fields that cannot change results (`output_dir`,
    /// `workers`).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config always serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
            m.remove("workers");
        }
        let bytes = serde_json::to_vec(&v).expect("value serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && !is_tagged(slot, &v) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, u) => *b = u,
    }
}

/// Tagged enums (`kind`) whose tag changes are replaced, not merged.
fn is_tagged(a: &Value, b: &Value) -> bool {
    match (a.get("kind"), b.get("kind")) {
        (Some(x), Some(y)) => x != y,
        (Some(_), None) => false,
        _ => false,
    }
}

fn gaussian_race_methods() -> Vec<MethodSpec> {
    let single = |m: &str, eta: f64| MethodSpec { batch_data: 1, ..MethodSpec::named(m, eta) };
    vec![
        MethodSpec { noise: Some(NoiseSpec::FittedGaussian { jitter: 1e-6 }), ..single("meco", 0.005) },
        single("nce_sgd", 0.1),
        single("nce_ngd", 0.1),
        single("ence_ngd", 0.1),
        // Unit-variance target: ε = 0.5 mixes within the 20 chain steps.
        MethodSpec { batch_data: 16, langevin_step_size: 0.5, ..single("mcmc", 0.01) },
        single("mle_closed_form", 1.0),
    ]
}

fn density_methods() -> Vec<MethodSpec> {
    vec![
        MethodSpec::named("meco", 1e-2),
        MethodSpec::named("nce_sgd", 1e-2),
        MethodSpec::named("nce_ngd", 1e-2),
        MethodSpec::named("ence_ngd", 1e-2),
        MethodSpec::named("cd", 1e-2),
    ]
}

/// Pretty JSON of the defaults, as a starting point for config files.
pub fn default_json(kind: ExperimentKind) -> String {
    serde_json::to_string_pretty(&ExperimentConfig::defaults(kind)).expect("defaults serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_document_fills_defaults() {
        let c =
            ExperimentConfig::from_json(r#"{"experiment": "density2d", "seeds": [3], "dataset": {"name": "circles"}}"#)
                .unwrap();
        assert_eq!(c.seeds, vec![3]);
        assert_eq!(c.dataset.name, "circles");
        assert_eq!(c.dataset.n, 10_000);
        assert_eq!(c.methods.len(), 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"experiment": "landscape", "sedes": [1]}"#).is_err());
    }

    #[test]
    fn noise_kind_switch_replaces() {
        let c = ExperimentConfig::from_json(
            r#"{"experiment": "density2d", "noise": {"kind": "empirical_conv", "kernel_std": 0.1, "batch_size": 0}}"#,
        )
        .unwrap();
        assert_eq!(c.noise, NoiseSpec::EmpiricalConv { kernel_std: 0.1, batch_size: 0 });
    }

    #[test]
    fn hash_depends_on_content() {
        let a = ExperimentConfig::defaults(ExperimentKind::Gaussian1d);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output_dir = "elsewhere".into();
        b.workers = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.seeds.push(99);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn chain_length_is_checked_on_load() {
        let doc = |k: usize| {
            format!(r#"{{"experiment": "density2d", "methods": [{{"method": "cd", "langevin_steps": {k}}}]}}"#)
        };
        assert!(ExperimentConfig::from_json(&doc(50)).is_ok());
        assert!(matches!(ExperimentConfig::from_json(&doc(7)), Err(HarnessError::Config(_))));
    }

    #[test]
    fn unknown_method_is_config_error() {
        let r = ExperimentConfig::from_json(r#"{"experiment": "gaussian1d", "methods": [{"method": "sgld"}]}"#);
        assert!(matches!(r, Err(HarnessError::Config(_))));
    }

    #[test]
    fn mismatched_subcommand_is_rejected() {
        assert!(ExperimentConfig::from_json_for(ExperimentKind::Variance, r#"{"experiment": "landscape"}"#).is_err());
    }
}
