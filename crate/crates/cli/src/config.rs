//! JSON run configuration with exhaustive defaults.
//!
//! Every hyperparameter that the experiments depend on lives here, so a
//! config file only needs to spell out the fields it overrides. The
//! effective (defaults-applied) config is written next to each
//! command's outputs; reloading it reproduces the run.

use std::path::Path;

use mtksmm_core::datasets::{RegressionKind, RegressionParams, ShapeKind};
use mtksmm_core::ksmm::TrainParams;
use mtksmm_core::mt_ksmm::{MtConfig, TransferMode};
use mtksmm_core::numerics::BasisConfig;
use mtksmm_core::numerics::quadrature_grid;
use mtksmm_core::numerics::Schedule;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Datasets to run on; `train` and `datagen` use the first entry,
    /// `evaluate`/`sweep` iterate over all of them.
    pub datasets: Vec<DatasetSpec>,
    pub model: ModelConfig,
    pub eval: EvalSpec,
    /// Output directory; created if absent.
    pub output_dir: String,
    /// Base seed for `train`/`datagen` (evaluation cells use the seeds
    /// listed under `eval`).
    pub seed: u64,
    /// Worker threads for independent evaluation cells; 0 means all
    /// available cores.
    pub workers: usize,
    /// Record wall-clock runtimes in metric CSVs. Turn off when
    /// byte-identical reruns are required.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            datasets: vec![DatasetSpec::default()],
            model: ModelConfig::default(),
            eval: EvalSpec::default(),
            output_dir: "out".into(),
            seed: 0,
            workers: 0,
            timing: true,
        }
    }
}

/// Which generator (or CSV file) provides the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Saddle {
        #[serde(default = "default_n_tasks")]
        n_tasks: usize,
        #[serde(default = "default_samples_per_task")]
        samples_per_task: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    Shape {
        shape: ShapeName,
        #[serde(default = "default_n_tasks")]
        n_tasks: usize,
        #[serde(default = "default_samples_per_task")]
        samples_per_task: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    Regression {
        variant: RegressionName,
        #[serde(default = "default_n_tasks")]
        n_tasks: usize,
        #[serde(default = "default_samples_per_task")]
        samples_per_task: usize,
        #[serde(default)]
        params: RegressionParamsConfig,
    },
    Csv {
        path: String,
        schema: CsvSchema,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Saddle {
            n_tasks: default_n_tasks(),
            samples_per_task: default_samples_per_task(),
            sigma: default_sigma(),
        }
    }
}

fn default_n_tasks() -> usize {
    500
}

fn default_samples_per_task() -> usize {
    100
}

fn default_sigma() -> f64 {
    0.1
}

impl DatasetSpec {
    /// Short name used in the `dataset` column of metric CSVs.
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::Saddle { .. } => "saddle".into(),
            DatasetSpec::Shape { shape, .. } => {
                match shape {
                    ShapeName::Convex => "convex",
                    ShapeName::Triangle => "triangle",
                    ShapeName::Sine => "sine",
                }
                .into()
            }
            DatasetSpec::Regression { variant, .. } => match variant {
                RegressionName::Plain => "regression_plain".into(),
                RegressionName::DomainShift => "regression_domain_shift".into(),
            },
            DatasetSpec::Csv { path, .. } => {
                let stem = Path::new(path)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.clone());
                format!("csv_{stem}")
            }
        }
    }

    pub fn validate(&self, idx: usize) -> Result<()> {
        let field = |f: &str| format!("datasets[{idx}].{f}");
        match self {
            DatasetSpec::Saddle { n_tasks, samples_per_task, sigma }
            | DatasetSpec::Shape { n_tasks, samples_per_task, sigma, .. } => {
                if *n_tasks == 0 {
                    return Err(CliError::Config(format!("{} must be >= 1", field("n_tasks"))));
                }
                if *samples_per_task == 0 {
                    return Err(CliError::Config(format!(
                        "{} must be >= 1",
                        field("samples_per_task")
                    )));
                }
                if !(*sigma >= 0.0) {
                    return Err(CliError::Config(format!("{} must be >= 0", field("sigma"))));
                }
            }
            DatasetSpec::Regression { n_tasks, samples_per_task, params, .. } => {
                if *n_tasks == 0 {
                    return Err(CliError::Config(format!("{} must be >= 1", field("n_tasks"))));
                }
                if *samples_per_task == 0 {
                    return Err(CliError::Config(format!(
                        "{} must be >= 1",
                        field("samples_per_task")
                    )));
                }
                for (name, v) in
                    [("a", params.a), ("b", params.b), ("c", params.c), ("d", params.d)]
                {
                    if !v.is_finite() {
                        return Err(CliError::Config(format!(
                            "{} must be finite",
                            field(&format!("params.{name}"))
                        )));
                    }
                }
            }
            DatasetSpec::Csv { path, schema } => {
                if path.is_empty() {
                    return Err(CliError::Config(format!("{} must not be empty", field("path"))));
                }
                if schema.value_columns.is_empty() {
                    return Err(CliError::Config(format!(
                        "{} must list at least one column",
                        field("schema.value_columns")
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Serde-friendly mirror of [`ShapeKind`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ShapeName {
    Convex,
    Triangle,
    Sine,
}

impl From<ShapeName> for ShapeKind {
    fn from(s: ShapeName) -> ShapeKind {
        match s {
            ShapeName::Convex => ShapeKind::Convex,
            ShapeName::Triangle => ShapeKind::Triangle,
            ShapeName::Sine => ShapeKind::Sine,
        }
    }
}

/// Serde-friendly mirror of [`RegressionKind`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RegressionName {
    Plain,
    DomainShift,
}

impl From<RegressionName> for RegressionKind {
    fn from(s: RegressionName) -> RegressionKind {
        match s {
            RegressionName::Plain => RegressionKind::Plain,
            RegressionName::DomainShift => RegressionKind::DomainShift,
        }
    }
}

/// Serde-friendly mirror of [`RegressionParams`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionParamsConfig {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for RegressionParamsConfig {
    fn default() -> Self {
        let p = RegressionParams::default();
        Self { a: p.a, b: p.b, c: p.c, d: p.d }
    }
}

impl From<RegressionParamsConfig> for RegressionParams {
    fn from(p: RegressionParamsConfig) -> RegressionParams {
        RegressionParams { a: p.a, b: p.b, c: p.c, d: p.d }
    }
}

/// Column layout of a user-provided CSV dataset.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub task_column: String,
    pub value_columns: Vec<String>,
    /// Optional ground-truth latent columns; absent columns leave the
    /// corresponding truth unset.
    pub true_z_columns: Vec<String>,
    pub true_u_columns: Vec<String>,
}

/// Model hyperparameters (bases, quadrature, annealing, E-step search).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub task_dim: usize,
    /// Max Legendre degree per dimension of the lower (sample-space) basis.
    pub lower_degree: usize,
    /// Max Legendre degree per dimension of the higher (task-space) basis.
    pub higher_degree: usize,
    pub lower_quad_nodes: usize,
    pub higher_quad_nodes: usize,
    pub mode: ModeName,
    pub schedule: ScheduleConfig,
    pub grid_resolution: usize,
    pub grad_iters: usize,
    pub grid_fraction: f64,
    pub task_grid_resolution: usize,
    /// Pin the sample latents to the first `latent_dim` observation
    /// coordinates (regression setting: z is the known input t).
    /// Requires the dataset to be generated, not CSV-loaded, only so
    /// far as the coordinates must exist.
    pub fix_z_to_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            task_dim: 1,
            lower_degree: 4,
            higher_degree: 4,
            lower_quad_nodes: 16,
            higher_quad_nodes: 16,
            mode: ModeName::Both,
            schedule: ScheduleConfig::default(),
            grid_resolution: 20,
            grad_iters: 5,
            grid_fraction: 0.6,
            task_grid_resolution: 20,
            fix_z_to_input: false,
        }
    }
}

/// Serde-friendly mirror of [`TransferMode`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    None,
    ModelOnly,
    Both,
}

impl ModeName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeName::None => "none",
            ModeName::ModelOnly => "model_only",
            ModeName::Both => "both",
        }
    }
}

impl From<ModeName> for TransferMode {
    fn from(m: ModeName) -> TransferMode {
        match m {
            ModeName::None => TransferMode::None,
            ModeName::ModelOnly => TransferMode::ModelOnly,
            ModeName::Both => TransferMode::Both,
        }
    }
}

impl From<TransferMode> for ModeName {
    fn from(m: TransferMode) -> ModeName {
        match m {
            TransferMode::None => ModeName::None,
            TransferMode::ModelOnly => ModeName::ModelOnly,
            TransferMode::Both => ModeName::Both,
        }
    }
}

/// Serde-friendly mirror of [`Schedule`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub lambda_lower_start: f64,
    pub lambda_lower_end: f64,
    pub lambda_task_start: f64,
    pub lambda_task_end: f64,
    pub lambda_rho_start: f64,
    pub lambda_rho_end: f64,
    pub total_iters: usize,
    pub beta: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = Schedule::default();
        Self {
            lambda_lower_start: s.lambda_lower_start,
            lambda_lower_end: s.lambda_lower_end,
            lambda_task_start: s.lambda_task_start,
            lambda_task_end: s.lambda_task_end,
            lambda_rho_start: s.lambda_rho_start,
            lambda_rho_end: s.lambda_rho_end,
            total_iters: s.total_iters,
            beta: s.beta,
        }
    }
}

impl From<ScheduleConfig> for Schedule {
    fn from(c: ScheduleConfig) -> Schedule {
        Schedule {
            lambda_lower_start: c.lambda_lower_start,
            lambda_lower_end: c.lambda_lower_end,
            lambda_task_start: c.lambda_task_start,
            lambda_task_end: c.lambda_task_end,
            lambda_rho_start: c.lambda_rho_start,
            lambda_rho_end: c.lambda_rho_end,
            total_iters: c.total_iters,
            beta: c.beta,
        }
    }
}

impl From<Schedule> for ScheduleConfig {
    fn from(s: Schedule) -> ScheduleConfig {
        ScheduleConfig {
            lambda_lower_start: s.lambda_lower_start,
            lambda_lower_end: s.lambda_lower_end,
            lambda_task_start: s.lambda_task_start,
            lambda_task_end: s.lambda_task_end,
            lambda_rho_start: s.lambda_rho_start,
            lambda_rho_end: s.lambda_rho_end,
            total_iters: s.total_iters,
            beta: s.beta,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, why: &str| Err(CliError::Config(format!("model.{f} {why}")));
        if self.latent_dim == 0 {
            return bad("latent_dim", "must be >= 1");
        }
        if self.task_dim == 0 {
            return bad("task_dim", "must be >= 1");
        }
        if self.lower_quad_nodes == 0 {
            return bad("lower_quad_nodes", "must be >= 1");
        }
        if self.higher_quad_nodes == 0 {
            return bad("higher_quad_nodes", "must be >= 1");
        }
        if self.grid_resolution == 0 {
            return bad("grid_resolution", "must be >= 1");
        }
        if self.task_grid_resolution == 0 {
            return bad("task_grid_resolution", "must be >= 1");
        }
        if !(self.grid_fraction >= 0.0 && self.grid_fraction <= 1.0) {
            return bad("grid_fraction", "must be in [0, 1]");
        }
        let s = &self.schedule;
        for (name, start, end) in [
            ("lambda_lower", s.lambda_lower_start, s.lambda_lower_end),
            ("lambda_task", s.lambda_task_start, s.lambda_task_end),
            ("lambda_rho", s.lambda_rho_start, s.lambda_rho_end),
        ] {
            if !(start > 0.0 && end > 0.0) {
                return bad(&format!("schedule.{name}_start/_end"), "must be > 0");
            }
            if end > start {
                return bad(&format!("schedule.{name}_end"), "must not exceed its start value");
            }
        }
        if s.total_iters == 0 {
            return bad("schedule.total_iters", "must be >= 1");
        }
        if !(s.beta > 0.0) {
            return bad("schedule.beta", "must be > 0");
        }
        Ok(())
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            grid_resolution: self.grid_resolution,
            grad_iters: self.grad_iters,
            grid_fraction: self.grid_fraction,
        }
    }

    /// Builds the core training config with the given transfer mode.
    pub fn to_mt_config(&self, mode: TransferMode) -> Result<MtConfig> {
        self.validate()?;
        let lower_basis = BasisConfig::new(self.latent_dim, self.lower_degree)
            .map_err(|e| CliError::Config(format!("model.lower_degree: {e}")))?;
        let higher_basis = BasisConfig::new(self.task_dim, self.higher_degree)
            .map_err(|e| CliError::Config(format!("model.higher_degree: {e}")))?;
        let lower_rule = quadrature_grid(self.latent_dim, self.lower_quad_nodes)
            .map_err(|e| CliError::Config(format!("model.lower_quad_nodes: {e}")))?;
        let higher_rule = quadrature_grid(self.task_dim, self.higher_quad_nodes)
            .map_err(|e| CliError::Config(format!("model.higher_quad_nodes: {e}")))?;
        let mut cfg = MtConfig::new(
            lower_basis,
            higher_basis,
            lower_rule,
            higher_rule,
            self.schedule.into(),
            mode,
        );
        cfg.params = self.train_params();
        cfg.task_grid_resolution = self.task_grid_resolution;
        Ok(cfg)
    }
}

/// Evaluation protocol: which cells to run and how to score them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    /// Training samples per task (S/T) values to sweep.
    pub st_list: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Histogram bins per dimension for the mutual-information score.
    pub bins: usize,
    /// Tasks used for training; the rest form the new-task pool.
    /// 0 means "all tasks" (no new-task evaluation).
    pub n_train_tasks: usize,
    /// Alternation rounds when fitting a new task post hoc.
    pub new_task_rounds: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            st_list: vec![3],
            seeds: vec![0, 1, 2],
            bins: 10,
            n_train_tasks: 0,
            new_task_rounds: 3,
        }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.st_list.is_empty() {
            return Err(CliError::Config("eval.st_list must not be empty".into()));
        }
        if self.st_list.iter().any(|&s| s == 0) {
            return Err(CliError::Config("eval.st_list entries must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("eval.seeds must not be empty".into()));
        }
        if self.bins < 2 {
            return Err(CliError::Config("eval.bins must be >= 2".into()));
        }
        if self.new_task_rounds == 0 {
            return Err(CliError::Config("eval.new_task_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::io_err(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(CliError::Config("datasets must list at least one entry".into()));
        }
        for (idx, ds) in self.datasets.iter().enumerate() {
            ds.validate(idx)?;
            if let DatasetSpec::Csv { path, .. } = ds {
                if !Path::new(path).exists() {
                    return Err(CliError::Config(format!(
                        "datasets[{idx}].path: file not found: {path}"
                    )));
                }
            }
        }
        self.model.validate()?;
        self.eval.validate()?;
        Ok(())
    }

    /// Writes the defaults-applied config next to the run's outputs.
    pub fn write_effective(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join("config.effective.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Runtime(format!("config serialization: {e}")))?;
        std::fs::write(&path, text + "\n").map_err(|e| crate::io_err(&path, e))
    }

    /// Worker-thread count with the 0 = all-cores default applied.
    pub fn effective_workers(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            self.workers
        }
    }
}
