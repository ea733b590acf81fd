//! One function per command; each returns a table in grid order.

use std::path::Path;

use eigenrisk::{
    check_all_limits, direct_eigenstructure, interpolation_threshold, log_size_grid, measure_alpha,
    measure_beta, optimal_ratio, risk_of_ratio, risk_with, simulate_krr_grid, simulate_rf_grid,
    synthetic_powerlaw_dataset, ExponentFit, Features, KernelDataset, PowerlawTask, RatioCurve,
    SimulationResult, SolverOptions, Task64, RISK_CSV_HEADER, TRIAL_CSV_HEADER,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    check_grid, CheckLimitsConfig, EstimateConfig, PowerlawConfig, PredictConfig, SimulateConfig,
};
use crate::CliError;

/// CSV body without the provenance columns.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Set when the command ran but its checks did not all pass.
    pub failure: Option<String>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), failure: None }
    }
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_f(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

/// snake_case name of a unit enum variant.
fn variant_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn solver_options(tolerance: Option<f64>) -> Result<SolverOptions<f64>, CliError> {
    let mut opts = SolverOptions::default();
    if let Some(t) = tolerance {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Config(format!("tolerance {t} must be positive")));
        }
        opts.tol = t;
    }
    Ok(opts)
}

fn features(k: Option<f64>) -> Features<f64> {
    k.map_or(Features::Infinite, Features::Finite)
}

fn check_ridges(ridge: &[f64]) -> Result<(), CliError> {
    check_grid("ridge", ridge, |x| x.is_finite() && x >= 0.0)
}

pub fn predict(c: &PredictConfig) -> Result<Table, CliError> {
    check_grid("n", &c.n, |x| x.is_finite() && x > 0.0)?;
    if let Some(k) = &c.k {
        check_grid("k", k, |x| x.is_finite() && x > 0.0)?;
    }
    check_ridges(&c.ridge)?;
    let ts = c.task.build()?;
    let opts = solver_options(c.tolerance)?;
    let ks: Vec<Option<f64>> = c.k.as_ref().map_or(vec![None], |k| k.iter().copied().map(Some).collect());
    let points: Vec<(f64, Option<f64>, f64)> = c
        .n
        .iter()
        .flat_map(|&n| ks.iter().flat_map(move |&k| c.ridge.iter().map(move |&d| (n, k, d))))
        .collect();
    let mut table = Table::new(&RISK_CSV_HEADER);
    table.header.push("near_threshold".into());
    table.rows = points
        .par_iter()
        .map(|&(n, k, ridge)| {
            let r = risk_with(&ts, n, features(k), ridge, opts).map_err(|e| at_point(e, n, k, ridge))?;
            let mut row = r.csv_fields();
            row.push(r.near_threshold.to_string());
            Ok(row)
        })
        .collect::<Result<_, CliError>>()?;
    Ok(table)
}

fn at_point(e: eigenrisk::Error, n: f64, k: Option<f64>, ridge: f64) -> CliError {
    let k = k.map_or_else(|| "inf".to_string(), |k| k.to_string());
    CliError::from(e).context(format!("at n = {n}, k = {k}, ridge = {ridge}"))
}

fn run_simulations(c: &SimulateConfig) -> Result<(Task64, Vec<SimulationResult>), CliError> {
    check_grid("n", &c.n, |x| x > 0)?;
    if let Some(k) = &c.k {
        check_grid("k", k, |x| x > 0)?;
    }
    check_ridges(&c.ridge)?;
    if c.trials == 0 {
        return Err(CliError::Config("trials must be positive".into()));
    }
    let ts = c.task.build()?;
    let mut out = Vec::new();
    for &n in &c.n {
        let res = match &c.k {
            Some(ks) => simulate_rf_grid(&ts, n, ks, &c.ridge, c.trials, c.seed, c.fix_dataset_across_k, c.sampling),
            None => simulate_krr_grid(&ts, n, &c.ridge, c.trials, c.seed),
        };
        out.extend(res.map_err(|e| CliError::from(e).context(format!("simulating n = {n}")))?);
    }
    Ok((ts, out))
}

const SIM_SUMMARY_HEADER: [&str; 9] =
    ["n", "k", "delta", "trials", "train_mean", "train_se", "test_mean", "test_se", "pseudo_inverse_trials"];

fn k_field(k: Option<usize>) -> String {
    k.map_or_else(|| "inf".to_string(), |k| k.to_string())
}

pub fn simulate(c: &SimulateConfig) -> Result<Table, CliError> {
    let (_, results) = run_simulations(c)?;
    if c.per_trial {
        let mut table = Table::new(&TRIAL_CSV_HEADER);
        table.rows = results.iter().flat_map(|r| r.csv_rows()).collect();
        return Ok(table);
    }
    let mut table = Table::new(&SIM_SUMMARY_HEADER);
    table.rows = results
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                k_field(r.k),
                f(r.ridge),
                r.trials.len().to_string(),
                f(r.train_mean),
                opt_f(r.train_se),
                f(r.test_mean),
                opt_f(r.test_se),
                r.trials.iter().filter(|t| t.pseudo_inverse).count().to_string(),
            ]
        })
        .collect();
    Ok(table)
}

const SWEEP_HEADER: [&str; 11] = [
    "n", "k", "delta", "e_test_theory", "e_train_theory", "test_mean", "test_se", "train_mean", "train_se",
    "test_z", "train_z",
];

/// Simulation joined with the theory for the same explicit modes (any
/// analytic tail is dropped on both sides).
pub fn sweep(c: &SimulateConfig) -> Result<Table, CliError> {
    let (ts, results) = run_simulations(c)?;
    let ts = ts.truncated();
    let opts = solver_options(c.tolerance)?;
    let mut table = Table::new(&SWEEP_HEADER);
    table.rows = results
        .par_iter()
        .map(|r| {
            let (n, k) = (r.n as f64, r.k.map(|k| k as f64));
            let th = risk_with(&ts, n, features(k), r.ridge, opts).map_err(|e| at_point(e, n, k, r.ridge))?;
            let z = |mean: f64, se: Option<f64>, want: f64| se.map(|s| (mean - want) / s);
            Ok(vec![
                r.n.to_string(),
                k_field(r.k),
                f(r.ridge),
                f(th.e_test),
                f(th.e_train),
                f(r.test_mean),
                opt_f(r.test_se),
                f(r.train_mean),
                opt_f(r.train_se),
                opt_f(z(r.test_mean, r.test_se, th.e_test)),
                opt_f(z(r.train_mean, r.train_se, th.e_train)),
            ])
        })
        .collect::<Result<_, CliError>>()?;
    Ok(table)
}

const POWERLAW_HEADER: [&str; 9] =
    ["alpha", "beta", "s_rel_sq", "n", "threshold", "branch", "kind", "ratio", "e_test"];

/// Ratio curves, one per noise level, each followed by an `optimum` row.
pub fn powerlaw(c: &PowerlawConfig) -> Result<Table, CliError> {
    check_grid("s_rel_sq", &c.s_rel_sq, |x| x.is_finite() && x >= 0.0)?;
    if !(c.n > 0.0 && c.n.is_finite()) {
        return Err(CliError::Config(format!("n = {} must be positive", c.n)));
    }
    let threshold = interpolation_threshold(c.alpha, c.beta)?;
    let mut table = Table::new(&POWERLAW_HEADER);
    for &s2 in &c.s_rel_sq {
        let task = PowerlawTask::new(c.alpha, c.beta)?.with_noise(s2)?;
        let curve = RatioCurve::new(&task, c.n, c.points, 1.0)?;
        let opt = optimal_ratio(&task)?;
        let branch = variant_name(&opt.branch);
        let prefix = [f(c.alpha), f(c.beta), f(s2), f(c.n), f(threshold), branch];
        let row = |kind: &str, r: f64, e: f64| {
            let mut row = prefix.to_vec();
            row.extend([kind.to_string(), f(r), f(e)]);
            row
        };
        for &(r, e) in &curve.samples {
            table.rows.push(row("curve", r, e));
        }
        let e_star = risk_of_ratio(&task, c.n, opt.ratio_star)?;
        table.rows.push(row("optimum", opt.ratio_star, e_star));
    }
    Ok(table)
}

const ESTIMATE_HEADER: [&str; 12] = [
    "dataset", "method", "parameter", "exponent", "slope", "slope_se", "intercept", "residual", "window_lo",
    "window_hi", "points", "flags",
];

pub fn estimate(c: &EstimateConfig, base_dir: &Path) -> Result<Table, CliError> {
    let ds = match (&c.kernel, &c.synthetic) {
        (Some(path), None) => KernelDataset::read(base_dir.join(path))
            .map_err(|e| CliError::Config(format!("reading kernel {path}: {e}")))?,
        (None, Some(spec)) => synthetic_powerlaw_dataset(spec)?,
        _ => return Err(CliError::Config("give exactly one of `kernel` and `synthetic`".into())),
    };
    let n = ds.len();
    let mut fit = c.fit;
    let holdout = *fit.holdout.get_or_insert((n / 5).max(1));
    let alpha_sizes = c.alpha_sizes.clone().unwrap_or_else(|| log_size_grid(10.min(n), n, 20));
    let beta_sizes = c
        .beta_sizes
        .clone()
        .unwrap_or_else(|| log_size_grid(10.min(n - holdout.min(n)), n.saturating_sub(holdout), 20));
    check_grid("alpha_sizes", &alpha_sizes, |x| x > 0)?;
    check_grid("beta_sizes", &beta_sizes, |x| x > 0)?;

    let mut table = Table::new(&ESTIMATE_HEADER);
    let mut push = |method: &str, parameter: &str, e: &ExponentFit| {
        let flags: Vec<String> = e.flags.iter().map(variant_name).collect();
        table.rows.push(vec![
            ds.name().to_string(),
            method.into(),
            parameter.into(),
            f(e.exponent),
            f(e.slope),
            f(e.slope_se),
            f(e.intercept),
            f(e.residual),
            e.window.0.to_string(),
            e.window.1.to_string(),
            e.points.len().to_string(),
            flags.join(";"),
        ]);
    };
    push("proxy", "alpha", &measure_alpha(&ds, &alpha_sizes, c.seed, &fit)?);
    push("proxy", "beta", &measure_beta(&ds, &beta_sizes, c.seed, &fit)?);
    if c.direct {
        let de = direct_eigenstructure(&ds);
        push("direct", "alpha", &de.fit_alpha(&fit)?);
        push("direct", "beta", &de.fit_beta(&fit)?);
    }
    Ok(table)
}

const LIMITS_HEADER: [&str; 7] = ["n", "k", "limit", "general", "limit_value", "relative_gap", "pass"];

pub fn check_limits(c: &CheckLimitsConfig) -> Result<Table, CliError> {
    if c.points.is_empty() {
        return Err(CliError::Config("`points` is empty".into()));
    }
    if !(c.max_gap > 0.0) {
        return Err(CliError::Config(format!("max_gap = {} must be positive", c.max_gap)));
    }
    let ts = c.task.build()?;
    let results = c
        .points
        .par_iter()
        .map(|&(n, k)| {
            check_all_limits(&ts, n, k, &c.grid).map_err(|e| at_point(e, n, Some(k), f64::NAN))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut table = Table::new(&LIMITS_HEADER);
    let mut failed = Vec::new();
    for (&(n, k), checks) in c.points.iter().zip(&results) {
        for r in checks {
            let pass = r.relative_gap < c.max_gap;
            let name = variant_name(&r.limit_name);
            if !pass {
                failed.push(format!("{name} at (n, k) = ({n}, {k}): gap {:e}", r.relative_gap));
            }
            table.rows.push(vec![
                f(n),
                f(k),
                name,
                f(r.general_value),
                f(r.limit_value),
                f(r.relative_gap),
                pass.to_string(),
            ]);
        }
    }
    if !failed.is_empty() {
        table.failure = Some(format!("limit checks failed: {}", failed.join("; ")));
    }
    Ok(table)
}
