//! `eigenrisk --config experiment.json [--out results.csv]`
//!
//! Runs one experiment described by a JSON config and writes a CSV whose
//! first two columns are a hash of the config and its seed. Exit codes:
//! 0 success, 2 configuration or I/O error, 3 numerical failure.

mod commands;
mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use sha2::{Digest, Sha256};

use crate::commands::Table;
use crate::config::Config;

#[derive(Parser, Debug)]
#[command(name = "eigenrisk", version, about = "Risk predictions, simulations and exponent estimates for RF regression and KRR")]
struct Args {
    /// Experiment config (JSON with a "command" field).
    #[arg(long)]
    config: PathBuf,
    /// Output CSV; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Root-finding tolerance for theory predictions; overrides the config.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Fit window `lo,hi` as fractions of the points, for `estimate`.
    #[arg(long, value_parser = parse_window)]
    fit_window: Option<(f64, f64)>,
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn context(self, ctx: impl fmt::Display) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{m} ({ctx})")),
            CliError::Numerical(m) => CliError::Numerical(format!("{m} ({ctx})")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<eigenrisk::Error> for CliError {
    fn from(e: eigenrisk::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

fn config_hash(bytes: &[u8], args: &Args) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    if let Some(t) = args.tolerance {
        h.update(format!("\ntolerance={t:e}"));
    }
    if let Some((a, b)) = args.fit_window {
        h.update(format!("\nfit_window={a:e},{b:e}"));
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn render(table: &Table, hash: &str, seed: u64) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Config(format!("writing CSV: {e}"));
    let mut header = vec!["config_hash".to_string(), "seed".to_string()];
    header.extend(table.header.iter().cloned());
    w.write_record(&header).map_err(io)?;
    let seed = seed.to_string();
    for row in &table.rows {
        w.write_record([hash, seed.as_str()].into_iter().chain(row.iter().map(String::as_str)))
            .map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Config(format!("writing CSV: {e}")))
}

fn run(args: &Args) -> Result<Table, CliError> {
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let bytes = std::fs::read(&args.config)
        .map_err(|e| CliError::Config(format!("reading {}: {e}", args.config.display())))?;
    let mut config: Config =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("parsing config: {e}")))?;
    if args.tolerance.is_some() {
        *config.tolerance_mut() = args.tolerance;
    }
    if let (Some(w), Config::Estimate(c)) = (args.fit_window, &mut config) {
        c.fit.window = w;
    }
    let base_dir = args.config.parent().unwrap_or(Path::new("."));
    let mut table = match &config {
        Config::Predict(c) => commands::predict(c),
        Config::Simulate(c) => commands::simulate(c),
        Config::Sweep(c) => commands::sweep(c),
        Config::Powerlaw(c) => commands::powerlaw(c),
        Config::Estimate(c) => commands::estimate(c, base_dir),
        Config::CheckLimits(c) => commands::check_limits(c),
    }?;
    let csv = render(&table, &config_hash(&bytes, args), config.seed())?;
    match &args.out {
        Some(path) => std::fs::write(path, &csv)
            .map_err(|e| CliError::Config(format!("writing {}: {e}", path.display())))?,
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(&csv)
                .map_err(|e| CliError::Config(format!("writing output: {e}")))?;
        }
    }
    table.rows.clear();
    Ok(table)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(Table { failure: Some(msg), .. }) => {
            eprintln!("eigenrisk: {msg}");
            ExitCode::from(3)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eigenrisk: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
