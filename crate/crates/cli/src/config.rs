//! Experiment settings: command-line flags over a TOML/JSON config file over
//! the study defaults.

use crate::{load_instance, run_experiment_csv, write_output, CliError};
use cmdp_core::experiment::{ExperimentConfig, Mode};
use cmdp_core::model::{random_instance, RandomConfig};
use cmdp_core::resolve::{BasisSource, OnPolicyConfig};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(clap::Args, Debug, Default)]
pub struct ExperimentArgs {
    /// Instance JSON; the study recipe instance when absent.
    pub instance: Option<PathBuf>,
    /// generative | offpolicy | onpolicy
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Comma-separated resolving horizons.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<u64>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Phase-one samples per pair (steps for on-policy).
    #[arg(long)]
    pub n1: Option<u64>,
    /// true | empirical
    #[arg(long)]
    pub basis: Option<String>,
    /// Target accuracy fed to the sample-based basis identification.
    #[arg(long)]
    pub epsilon_target: Option<f64>,
    /// Initial on-policy walk limit.
    #[arg(long)]
    pub n3: Option<u64>,
    /// On-policy lower bound on basis entries; estimated when absent.
    #[arg(long)]
    pub xi_prime: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Record wall-clock milliseconds per replicate.
    #[arg(long)]
    pub timing: bool,
    /// TOML or JSON file with any of the settings above.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub instance: Option<PathBuf>,
    pub mode: Option<String>,
    pub grid: Option<Vec<u64>>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub n1: Option<u64>,
    pub basis: Option<String>,
    pub epsilon_target: Option<f64>,
    pub n3: Option<u64>,
    pub xi_prime: Option<f64>,
    pub jobs: Option<usize>,
    pub timing: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub instance: Option<PathBuf>,
    pub experiment: ExperimentConfig,
    pub jobs: usize,
}

pub const DEFAULT_GRID: [u64; 4] = [1_000, 3_000, 10_000, 30_000];

pub fn resolve(args: &ExperimentArgs, file: &FileConfig) -> Result<Settings, CliError> {
    let mode = match (&args.mode, &file.mode) {
        (Some(m), _) => *m,
        (None, Some(m)) => m.parse().map_err(CliError::Usage)?,
        (None, None) => Mode::Generative,
    };
    let grid = args.grid.clone().or_else(|| file.grid.clone()).unwrap_or_else(|| DEFAULT_GRID.to_vec());
    if grid.is_empty() || grid.contains(&0) {
        return Err(CliError::Usage("grid entries must be positive".into()));
    }
    let replicates = args.replicates.or(file.replicates).unwrap_or(50);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let mut cfg = ExperimentConfig::new(mode, grid, replicates, seed);
    cfg.n1 = args.n1.or(file.n1).unwrap_or(cfg.n1);
    if cfg.n1 == 0 || replicates == 0 {
        return Err(CliError::Usage("--n1 and --replicates must be positive".into()));
    }
    let epsilon_target = args.epsilon_target.or(file.epsilon_target).unwrap_or(0.1);
    cfg.basis = match args.basis.as_deref().or(file.basis.as_deref()).unwrap_or("true") {
        "true" => BasisSource::TrueLp,
        "empirical" => BasisSource::Empirical { epsilon_target },
        other => return Err(CliError::Usage(format!("unknown basis source '{other}' (true|empirical)"))),
    };
    let defaults = OnPolicyConfig::default();
    cfg.on_policy = OnPolicyConfig {
        n3: args.n3.or(file.n3).unwrap_or(defaults.n3),
        xi_prime: args.xi_prime.or(file.xi_prime),
        ..defaults
    };
    cfg.timing = args.timing || file.timing.unwrap_or(false);
    Ok(Settings {
        instance: args.instance.clone().or_else(|| file.instance.clone()),
        experiment: cfg,
        jobs: args.jobs.or(file.jobs).unwrap_or(1),
    })
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let settings = resolve(args, &file)?;
    let inst = match &settings.instance {
        Some(p) => load_instance(p)?,
        None => random_instance(&RandomConfig::default()).map_err(|e| CliError::Internal(e.to_string()))?,
    };
    let csv = run_experiment_csv(&inst, &settings.experiment, settings.jobs)?;
    write_output(args.output.as_deref(), &csv)
}
