//! `cmdp`: instance generation, exact solving, basis identification and
//! replicated learning experiments.

mod config;

use clap::{Parser, Subcommand};
use cmdp_core::basis::{hardness_constants, identify_basis_true, identify_with_doubling, verify_basis, DoublingConfig};
use cmdp_core::eval::value_iteration;
use cmdp_core::experiment::{experiment_csv, reference, run_experiment, ExperimentError};
use cmdp_core::lp::{build_infinite_lp, lp_budgets, solve_lp, BasisPair, StandardLp};
use cmdp_core::model::{random_instance, CmdpInstance, RandomConfig, RngHandle};
use cmdp_core::par::with_jobs;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cmdp", version, about = "Constrained MDP learning via LP basis identification and resolving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance and write it as JSON.
    Gen(GenArgs),
    /// Solve an instance exactly and report value, basis and hardness constants.
    Solve(SolveArgs),
    /// Identify a basis from generative samples.
    Identify(IdentifyArgs),
    /// Run replicated learning runs over a grid of horizons and write CSV.
    Experiment(config::ExperimentArgs),
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long, default_value_t = 10)]
    states: usize,
    #[arg(long, default_value_t = 10)]
    actions: usize,
    #[arg(long)]
    gamma: f64,
    /// Number of cost constraints.
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Half-width of the uniform observation noise.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0.9)]
    budget_fraction: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SolveArgs {
    instance: PathBuf,
    /// Cross-check the LP value against value iteration (needs K = 0).
    #[arg(long)]
    check_vi: bool,
    /// Largest number of pairs for which hardness constants are computed.
    #[arg(long, default_value_t = 64)]
    hardness_limit: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct IdentifyArgs {
    instance: PathBuf,
    /// Samples per pair in the first round.
    #[arg(long, default_value_t = 1000)]
    n0: u64,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Total sample budget; with a budget the per-pair count doubles until it is spent.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::NotOptimal(_) => CliError::Data(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(&args),
        Command::Solve(args) => cmd_solve(&args),
        Command::Identify(args) => cmd_identify(&args),
        Command::Experiment(args) => config::cmd_experiment(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

pub fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn load_instance(path: &Path) -> Result<CmdpInstance, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    CmdpInstance::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Ten significant digits; non-finite values become null.
fn num(v: f64) -> Value {
    if v.is_finite() {
        let rounded: f64 = format!("{v:.9e}").parse().expect("formatted float parses");
        json!(rounded)
    } else {
        Value::Null
    }
}

fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| num(*x)).collect())
}

fn basis_value(b: &BasisPair, lp: &StandardLp) -> Value {
    serde_json::from_str(&b.to_json(lp)).expect("basis JSON parses")
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let cfg = RandomConfig {
        states: args.states,
        actions: args.actions,
        gamma: args.gamma,
        constraints: args.k,
        seed: args.seed,
        noise: args.noise,
        budget_fraction: args.budget_fraction,
        ..RandomConfig::default()
    };
    let inst = random_instance(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    eprintln!("seed: {}", args.seed);
    let mut text = inst.to_json();
    text.push('\n');
    write_output(args.output.as_deref(), &text)
}

fn cmd_solve(args: &SolveArgs) -> Result<(), CliError> {
    let inst = load_instance(&args.instance)?;
    if args.check_vi && inst.num_constraints() > 0 {
        return Err(CliError::Usage("--check-vi needs an instance without constraints".into()));
    }
    let lp = build_infinite_lp(&inst);
    let r = reference(&inst)?;
    let sol = solve_lp(&lp).map_err(|e| CliError::Internal(e.to_string()))?;
    let budgets = lp_budgets(&inst);
    let binding: Vec<usize> = (0..inst.num_constraints())
        .filter(|&k| {
            let used: f64 = (0..lp.num_cols()).map(|c| lp.cost_matrix[(k, c)] * sol.q[c]).sum();
            budgets[k] - used <= 1e-9 * (1.0 + budgets[k].abs())
        })
        .collect();
    let id = identify_basis_true(&lp).map_err(|e| CliError::Internal(e.to_string()))?;
    let hardness = if inst.num_pairs() <= args.hardness_limit {
        let h = hardness_constants(&lp, 100_000).map_err(|e| CliError::Internal(e.to_string()))?;
        json!({
            "delta1": num(h.delta1),
            "delta2": num(h.delta2),
            "sigma0": num(h.sigma0),
            "sigma_star": num(h.sigma_star),
            "lp_solves": h.lp_solves,
            "exhaustive": h.exhaustive,
        })
    } else {
        Value::Null
    };
    let mut report = json!({
        "lp_value": num(r.lp_value),
        "v_reward": num(r.optimal.v_reward),
        "v_costs": nums(&r.optimal.v_costs),
        "budgets": nums(&inst.budgets),
        "binding": binding,
        "basis": basis_value(&id.basis, &lp),
        "hardness": hardness,
    });
    if args.check_vi {
        let (vi, _) = value_iteration(&inst, 1e-12);
        let diff = (r.lp_value - (1.0 - inst.gamma) * vi).abs();
        report["vi_check"] = json!({ "vi_value": num(vi), "abs_diff": num(diff), "passed": diff <= 1e-6 });
        if diff > 1e-6 {
            write_output(args.output.as_deref(), &pretty(&report))?;
            return Err(CliError::Internal(format!("value iteration disagrees with the LP by {diff:e}")));
        }
    }
    write_output(args.output.as_deref(), &pretty(&report))
}

fn cmd_identify(args: &IdentifyArgs) -> Result<(), CliError> {
    let inst = load_instance(&args.instance)?;
    if args.n0 == 0 || !(args.epsilon > 0.0 && args.epsilon < 1.0) {
        return Err(CliError::Usage("--n0 must be positive and --epsilon in (0, 1)".into()));
    }
    let lp = build_infinite_lp(&inst);
    let truth = identify_basis_true(&lp).map_err(|e| CliError::Data(e.to_string()))?.basis;
    let budget = args.budget.unwrap_or(args.n0 * inst.num_pairs() as u64);
    let cfg = DoublingConfig { n0_start: args.n0, sample_budget: budget, epsilon: args.epsilon, stop_on_agreement: false };
    let out = identify_with_doubling(&inst, &cfg, &mut RngHandle::new(args.seed))
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let verified = match &out.basis {
        Some(b) => verify_basis(&lp, b).map_err(|e| CliError::Internal(e.to_string()))?.passed,
        None => false,
    };
    let rounds: Vec<Value> = out
        .rounds
        .iter()
        .map(|r| json!({ "n0": r.n0, "columns": r.basis.as_ref().map(|b| b.cols.len()) }))
        .collect();
    let report = json!({
        "basis": out.basis.as_ref().map(|b| basis_value(b, &lp)),
        "true_basis": basis_value(&truth, &lp),
        "matches": out.basis.as_ref() == Some(&truth),
        "verified": verified,
        "samples_used": out.samples_used,
        "rounds": rounds,
    });
    write_output(args.output.as_deref(), &pretty(&report))
}

/// Experiment entry point shared with the config module.
pub fn run_experiment_csv(
    inst: &CmdpInstance,
    cfg: &cmdp_core::experiment::ExperimentConfig,
    jobs: usize,
) -> Result<String, CliError> {
    let r = reference(inst)?;
    let rows = with_jobs(jobs, || run_experiment(inst, &r, cfg));
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} replicate(s) failed; their cells are NA");
    }
    Ok(experiment_csv(&rows, cfg))
}
