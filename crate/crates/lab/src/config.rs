//! Experiment configuration: a flat TOML file.
//!
//! Only `method` and `seeds` are required. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use forkmerge_core::forkmerge::{MergeSchedule, SearchStrategy, DEFAULT_LAMBDA_GRID};
use forkmerge_core::metrics::sweep::TgGcsConfig;
use forkmerge_core::nn::{Activation, ModelSpec};
use forkmerge_core::optim::{OptConfig, ScheduleKind};
use forkmerge_core::tasks::TaskFamilyConfig;
use forkmerge_core::TaskId;
use serde::{Deserialize, Serialize};

/// Output directory override.
pub const OUT_DIR_ENV: &str = "FORKMERGE_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
}

fn field(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Stl,
    Ew,
    FixedLambda,
    Gcs,
    PostTrain,
    Forkmerge,
    ForkmergeMulti,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Stl => "stl",
            Method::Ew => "ew",
            Method::FixedLambda => "fixed_lambda",
            Method::Gcs => "gcs",
            Method::PostTrain => "post_train",
            Method::Forkmerge => "forkmerge",
            Method::ForkmergeMulti => "forkmerge_multi",
        }
    }

    pub fn is_forkmerge(self) -> bool {
        matches!(self, Method::Forkmerge | Method::ForkmergeMulti)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchName {
    Grid,
    Binary,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Load the task family from `gen-data` output instead of generating it.
    pub data_dir: Option<PathBuf>,
    /// Run STL alongside other methods to report transfer gain.
    pub compute_tg: bool,

    pub n_tasks: usize,
    pub input_dim: usize,
    pub n_classes: usize,
    pub train_samples: usize,
    pub aux_train_samples: Option<usize>,
    pub val_samples: usize,
    pub test_samples: usize,
    pub relatedness: Vec<f64>,
    pub noise_std: f64,
    pub center_radius: f64,
    pub max_rotation: f64,
    pub max_shift: f64,
    /// Fixed data seed; by default each run seed also seeds its data.
    pub data_seed: Option<u64>,

    pub hidden: Vec<usize>,
    pub activation: ActivationName,

    pub steps: u64,
    pub lr: f64,
    pub momentum: f64,
    pub schedule: ScheduleName,
    pub batch_size: usize,
    /// Per-task loss multipliers keyed by task id.
    pub loss_scales: BTreeMap<String, f64>,

    pub interval: u64,
    pub lambda_grid: Vec<f64>,
    pub search: SearchName,
    pub binary_iters: usize,
    pub prune_keep: Option<usize>,
    pub val_subsample: Option<usize>,

    pub pretrain_fraction: f64,

    pub tg_gcs_warmup: u64,
    pub tg_gcs_points: usize,
    pub tg_gcs_eta: f64,
    pub tg_gcs_lambdas: Vec<f64>,
    pub csd_lambdas: Vec<f64>,
}

/// Presence check for the two keys without defaults.
#[derive(Deserialize)]
struct Required {
    method: Option<toml::Value>,
    seeds: Option<toml::Value>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let family = TaskFamilyConfig::default();
        let opt = OptConfig::default();
        let schedule = MergeSchedule::default();
        let sweep = TgGcsConfig::default();
        ExperimentConfig {
            method: Method::Stl,
            seeds: Vec::new(),
            output_dir: PathBuf::from("runs"),
            data_dir: None,
            compute_tg: true,
            n_tasks: family.n_tasks,
            input_dim: family.input_dim,
            n_classes: family.n_classes,
            train_samples: family.train_samples,
            aux_train_samples: family.aux_train_samples,
            val_samples: family.val_samples,
            test_samples: family.test_samples,
            relatedness: family.relatedness,
            noise_std: family.noise_std,
            center_radius: family.center_radius,
            max_rotation: family.max_rotation,
            max_shift: family.max_shift,
            data_seed: None,
            hidden: vec![32, 32],
            activation: ActivationName::Relu,
            steps: schedule.total_steps,
            lr: opt.lr,
            momentum: opt.momentum,
            schedule: ScheduleName::Cosine,
            batch_size: opt.batch_size,
            loss_scales: BTreeMap::new(),
            interval: schedule.interval,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            search: SearchName::Grid,
            binary_iters: 4,
            prune_keep: None,
            val_subsample: None,
            pretrain_fraction: 0.8,
            tg_gcs_warmup: sweep.warmup_steps,
            tg_gcs_points: sweep.n_points,
            tg_gcs_eta: sweep.eta,
            tg_gcs_lambdas: sweep.lambdas,
            csd_lambdas: vec![0.0, 0.25, 0.5, 1.0],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let parse_err = |e: toml::de::Error| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.message().to_string(),
        };
        let required: Required = toml::from_str(text).map_err(parse_err)?;
        if required.method.is_none() {
            return Err(field("method", "missing"));
        }
        if required.seeds.is_none() {
            return Err(field("seeds", "missing"));
        }
        let cfg: ExperimentConfig = toml::from_str(text).map_err(parse_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The effective configuration with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `FORKMERGE_OUT_DIR` if set, else `output_dir`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required"));
        }
        self.family(0).validate().map_err(|e| field("family", e.to_string()))?;
        self.model_spec().map_err(|e| field("hidden", e.to_string()))?;
        self.opt_config()?;
        if self.steps == 0 {
            return Err(field("steps", "must be positive"));
        }
        if self.method.is_forkmerge() {
            let branches = match self.method {
                Method::Forkmerge => 2,
                _ => self.n_tasks,
            };
            self.merge_schedule()
                .validate(branches)
                .map_err(|e| field("interval", e.to_string()))?;
        }
        if self.method == Method::ForkmergeMulti && self.n_tasks < 2 {
            return Err(field("n_tasks", "forkmerge_multi needs an auxiliary task"));
        }
        if self.method == Method::FixedLambda && self.lambda_grid.is_empty() {
            return Err(field("lambda_grid", "must not be empty"));
        }
        if !(0.0..=1.0).contains(&self.pretrain_fraction) {
            return Err(field("pretrain_fraction", "must lie in [0, 1]"));
        }
        if self.tg_gcs_eta <= 0.0 || !self.tg_gcs_eta.is_finite() {
            return Err(field("tg_gcs_eta", "must be positive"));
        }
        Ok(())
    }

    /// The family generator config for a run seed.
    pub fn family(&self, seed: u64) -> TaskFamilyConfig {
        TaskFamilyConfig {
            n_tasks: self.n_tasks,
            input_dim: self.input_dim,
            n_classes: self.n_classes,
            train_samples: self.train_samples,
            aux_train_samples: self.aux_train_samples,
            val_samples: self.val_samples,
            test_samples: self.test_samples,
            relatedness: self.relatedness.clone(),
            noise_std: self.noise_std,
            center_radius: self.center_radius,
            max_rotation: self.max_rotation,
            max_shift: self.max_shift,
            seed: self.data_seed.unwrap_or(seed),
        }
    }

    pub fn model_spec(&self) -> forkmerge_core::Result<ModelSpec> {
        let activation = match self.activation {
            ActivationName::Relu => Activation::Relu,
            ActivationName::Tanh => Activation::Tanh,
        };
        ModelSpec::classifier(
            self.input_dim,
            self.hidden.clone(),
            activation,
            self.n_tasks,
            self.n_classes,
        )
    }

    pub fn opt_config(&self) -> Result<OptConfig, ConfigError> {
        let mut loss_scales = BTreeMap::new();
        for (key, &scale) in &self.loss_scales {
            let id: u32 = key
                .parse()
                .map_err(|_| field("loss_scales", format!("`{key}` is not a task id")))?;
            if id as usize >= self.n_tasks {
                return Err(field("loss_scales", format!("task {id} does not exist")));
            }
            if !(scale.is_finite() && scale > 0.0) {
                return Err(field("loss_scales", format!("scale for task {id} must be positive")));
            }
            loss_scales.insert(TaskId(id), scale);
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(field("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(field("momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(field("batch_size", "must be positive"));
        }
        Ok(OptConfig {
            lr: self.lr,
            momentum: self.momentum,
            schedule: match self.schedule {
                ScheduleName::Constant => ScheduleKind::Constant,
                ScheduleName::Cosine => ScheduleKind::Cosine,
            },
            batch_size: self.batch_size,
            loss_scales,
        })
    }

    pub fn merge_schedule(&self) -> MergeSchedule {
        MergeSchedule {
            total_steps: self.steps,
            interval: self.interval,
            lambda_grid: self.lambda_grid.clone(),
            strategy: match self.search {
                SearchName::Grid => SearchStrategy::Grid,
                SearchName::Binary => SearchStrategy::Binary {
                    iters: self.binary_iters,
                },
                SearchName::Greedy => SearchStrategy::Greedy,
            },
            prune_keep: self.prune_keep,
            val_subsample: self.val_subsample,
        }
    }

    pub fn tg_gcs(&self) -> TgGcsConfig {
        TgGcsConfig {
            warmup_steps: self.tg_gcs_warmup,
            lambdas: self.tg_gcs_lambdas.clone(),
            n_points: self.tg_gcs_points,
            eta: self.tg_gcs_eta,
        }
    }

    /// `(pretrain, finetune)` steps for post-training.
    pub fn post_train_split(&self) -> (u64, u64) {
        let pre = (self.steps as f64 * self.pretrain_fraction).round() as u64;
        (pre, self.steps - pre)
    }
}
