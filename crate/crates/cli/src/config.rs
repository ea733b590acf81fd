//! Experiment configuration: one JSON document with a `command` field.

use eigenrisk::{
    make_powerlaw_structure, FeatureSampling, FitOptions, LimitGrid, PowerlawTask, SyntheticKernelSpec,
    Task64,
};
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Config {
    Predict(PredictConfig),
    Simulate(SimulateConfig),
    Sweep(SimulateConfig),
    Powerlaw(PowerlawConfig),
    Estimate(EstimateConfig),
    CheckLimits(CheckLimitsConfig),
}

impl Config {
    pub fn seed(&self) -> u64 {
        match self {
            Config::Predict(c) => c.seed,
            Config::Simulate(c) | Config::Sweep(c) => c.seed,
            Config::Powerlaw(c) => c.seed,
            Config::Estimate(c) => c.seed,
            Config::CheckLimits(c) => c.seed,
        }
    }

    pub fn tolerance_mut(&mut self) -> &mut Option<f64> {
        match self {
            Config::Predict(c) => &mut c.tolerance,
            Config::Simulate(c) | Config::Sweep(c) => &mut c.tolerance,
            Config::Powerlaw(c) => &mut c.tolerance,
            Config::Estimate(c) => &mut c.tolerance,
            Config::CheckLimits(c) => &mut c.tolerance,
        }
    }
}

/// Where the task eigenstructure comes from.
#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// `λᵢ = i^{-α}`, `vᵢ² = i^{-β}` with `modes` explicit modes and, if
    /// `tail` is set, the analytic remainder.
    Powerlaw {
        alpha: f64,
        beta: f64,
        modes: usize,
        #[serde(default)]
        noise_var: f64,
        #[serde(default = "yes")]
        tail: bool,
    },
    Explicit(Task64),
}

fn yes() -> bool {
    true
}

impl TaskSpec {
    pub fn build(&self) -> Result<Task64, CliError> {
        match self {
            TaskSpec::Powerlaw { alpha, beta, modes, noise_var, tail } => {
                let task = PowerlawTask::new(*alpha, *beta)?;
                let ts = make_powerlaw_structure(&task, *modes)?.with_noise(*noise_var)?;
                Ok(if *tail { ts } else { ts.truncated() })
            }
            TaskSpec::Explicit(ts) => Ok(ts.clone()),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub task: TaskSpec,
    pub n: Vec<f64>,
    /// Absent for KRR.
    #[serde(default)]
    pub k: Option<Vec<f64>>,
    pub ridge: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

/// Shared by `simulate` and `sweep`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub task: TaskSpec,
    pub n: Vec<usize>,
    #[serde(default)]
    pub k: Option<Vec<usize>>,
    pub ridge: Vec<f64>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fix_dataset_across_k: bool,
    #[serde(default)]
    pub sampling: FeatureSampling,
    /// One row per trial instead of per grid point (`simulate` only).
    #[serde(default)]
    pub per_trial: bool,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerlawConfig {
    pub alpha: f64,
    pub beta: f64,
    pub s_rel_sq: Vec<f64>,
    pub n: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

fn default_points() -> usize {
    100
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Kernel file (binary with JSON header, or CSV).
    #[serde(default)]
    pub kernel: Option<String>,
    /// Synthetic powerlaw kernel instead of a file.
    #[serde(default)]
    pub synthetic: Option<SyntheticKernelSpec>,
    #[serde(default)]
    pub alpha_sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub beta_sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub fit: FitOptions,
    /// Also fit the eigenvalues and coefficient tailsums of the full kernel.
    #[serde(default)]
    pub direct: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckLimitsConfig {
    pub task: TaskSpec,
    /// `(n, k)` pairs.
    #[serde(default = "default_limit_points")]
    pub points: Vec<(f64, f64)>,
    #[serde(default)]
    pub grid: LimitGrid,
    /// Largest relative gap that counts as agreement.
    #[serde(default = "default_max_gap")]
    pub max_gap: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

fn default_limit_points() -> Vec<(f64, f64)> {
    vec![(64.0, 256.0), (256.0, 64.0)]
}

fn default_max_gap() -> f64 {
    1e-3
}

/// Non-empty, finite and strictly increasing.
pub fn check_grid<T: Copy + PartialOrd + std::fmt::Display>(
    name: &str,
    grid: &[T],
    finite: impl Fn(T) -> bool,
) -> Result<(), CliError> {
    if grid.is_empty() {
        return Err(CliError::Config(format!("grid `{name}` is empty")));
    }
    if let Some(x) = grid.iter().find(|x| !finite(**x)) {
        return Err(CliError::Config(format!("grid `{name}` contains {x}")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Config(format!("grid `{name}` must be strictly increasing")));
    }
    Ok(())
}
