//! Replicated learning runs over a grid of horizons and their CSV rendering.

use crate::eval::{err_metric, evaluate_exact, regret_report, EvalError, ValueReport};
use crate::lp::{build_infinite_lp, solve_lp, LpError};
use crate::model::{CmdpInstance, RngHandle};
use crate::par::map_replicates;
use crate::policy::{extract_policy, PolicyError, PolicyTable};
use crate::resolve::{
    run_adaptive_resolving, run_offpolicy, run_onpolicy, BasisSource, OnPolicyConfig, ResolveConfig, RunOutput,
};
use crate::simplex::SimplexStatus;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("instance LP is {0:?}")]
    NotOptimal(SimplexStatus),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Generative,
    OffPolicy,
    OnPolicy,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Generative => "generative",
            Mode::OffPolicy => "offpolicy",
            Mode::OnPolicy => "onpolicy",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "generative" => Ok(Mode::Generative),
            "offpolicy" => Ok(Mode::OffPolicy),
            "onpolicy" => Ok(Mode::OnPolicy),
            other => Err(format!("unknown mode '{other}' (generative|offpolicy|onpolicy)")),
        }
    }
}

/// Optimal occupancy, LP value and the optimal policy's values.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub q_star: Vec<f64>,
    pub lp_value: f64,
    pub optimal: ValueReport,
}

pub fn reference(inst: &CmdpInstance) -> Result<Reference, ExperimentError> {
    let sol = solve_lp(&build_infinite_lp(inst))?;
    if sol.status != SimplexStatus::Optimal {
        return Err(ExperimentError::NotOptimal(sol.status));
    }
    let policy = extract_policy(&sol.q, inst.num_states, inst.num_actions)?;
    let optimal = evaluate_exact(inst, &policy)?;
    Ok(Reference { q_star: sol.q, lp_value: sol.value, optimal })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Resolving horizons `N`.
    pub grid: Vec<u64>,
    pub replicates: usize,
    pub seed: u64,
    /// Phase-one samples per pair (steps for on-policy).
    pub n1: u64,
    pub basis: BasisSource,
    pub on_policy: OnPolicyConfig,
    /// Record wall-clock milliseconds (makes output nondeterministic).
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn new(mode: Mode, grid: Vec<u64>, replicates: usize, seed: u64) -> Self {
        Self {
            mode,
            grid,
            replicates,
            seed,
            n1: 20,
            basis: BasisSource::TrueLp,
            on_policy: OnPolicyConfig::default(),
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateStats {
    pub err_l1: f64,
    pub regret_r: f64,
    pub regret_k_max: f64,
    pub samples_used: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub mode: Mode,
    pub n: u64,
    pub replicate: usize,
    pub outcome: Result<ReplicateStats, String>,
    pub wall_ms: Option<f64>,
}

/// Runs one learning procedure. Replicate `m` uses stream `m` of the seed at
/// every horizon, so horizons are compared on matched seeds.
pub fn run_once(inst: &CmdpInstance, cfg: &ExperimentConfig, n: u64, replicate: usize) -> Result<RunOutput, String> {
    let mut rng = RngHandle::with_stream(cfg.seed, replicate as u64);
    let rc = ResolveConfig::new(cfg.n1, n, cfg.basis.clone());
    let out = match cfg.mode {
        Mode::Generative => run_adaptive_resolving(inst, &rc, &mut rng),
        Mode::OffPolicy => {
            let behavior = PolicyTable::uniform(inst.num_states, inst.num_actions);
            run_offpolicy(inst, &behavior, &rc, &mut rng)
        }
        Mode::OnPolicy => run_onpolicy(inst, &rc, &cfg.on_policy, &mut rng),
    };
    out.map_err(|e| e.to_string())
}

fn replicate_stats(inst: &CmdpInstance, reference: &Reference, out: &RunOutput) -> Result<ReplicateStats, String> {
    let err_l1 = err_metric(std::slice::from_ref(&out.q_bar), &reference.q_star).map_err(|e| e.to_string())?;
    let report = evaluate_exact(inst, &out.policy).map_err(|e| e.to_string())?;
    let regret = regret_report(inst, &report, &reference.optimal);
    Ok(ReplicateStats {
        err_l1,
        regret_r: regret.regret_r,
        regret_k_max: if regret.regret_k.is_empty() { 0.0 } else { regret.max_cost_regret() },
        samples_used: out.samples_used,
    })
}

/// Every (N, replicate) cell, in grid-major order.
pub fn run_experiment(inst: &CmdpInstance, reference: &Reference, cfg: &ExperimentConfig) -> Vec<ReplicateRow> {
    let cells: Vec<(u64, usize)> =
        cfg.grid.iter().flat_map(|&n| (0..cfg.replicates).map(move |m| (n, m))).collect();
    map_replicates(cells.len(), |i| {
        let (n, replicate) = cells[i];
        let start = Instant::now();
        let outcome = run_once(inst, cfg, n, replicate).and_then(|out| replicate_stats(inst, reference, &out));
        let wall_ms = cfg.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
        ReplicateRow { mode: cfg.mode, n, replicate, outcome, wall_ms }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n: u64,
    pub ok: usize,
    pub failed: usize,
    pub err_l1: f64,
    pub regret_r: f64,
    pub regret_k_max: f64,
    pub samples_used: f64,
    pub wall_ms: Option<f64>,
}

/// Means over successful replicates, one entry per horizon in grid order.
pub fn summarize(rows: &[ReplicateRow], grid: &[u64]) -> Vec<Summary> {
    grid.iter()
        .map(|&n| {
            let cell: Vec<&ReplicateRow> = rows.iter().filter(|r| r.n == n).collect();
            let ok: Vec<&ReplicateStats> = cell.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let m = ok.len() as f64;
            let mean = |f: &dyn Fn(&ReplicateStats) -> f64| if ok.is_empty() { f64::NAN } else { ok.iter().map(|s| f(s)).sum::<f64>() / m };
            let walls: Vec<f64> = cell.iter().filter_map(|r| r.wall_ms).collect();
            Summary {
                n,
                ok: ok.len(),
                failed: cell.len() - ok.len(),
                err_l1: mean(&|s| s.err_l1),
                regret_r: mean(&|s| s.regret_r),
                regret_k_max: mean(&|s| s.regret_k_max),
                samples_used: mean(&|s| s.samples_used as f64),
                wall_ms: (!walls.is_empty()).then(|| walls.iter().sum::<f64>() / walls.len() as f64),
            }
        })
        .collect()
}

/// Ten significant digits.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.9e}")
    } else {
        "NA".into()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), fmt_num)
}

pub const CSV_HEADER: &str = "mode,N,replicate,err_l1,regret_r,regret_k_max,samples_used,wall_ms";

/// Replicate rows followed by a `mean` row per horizon.
pub fn experiment_csv(rows: &[ReplicateRow], cfg: &ExperimentConfig) -> String {
    let mut out = String::from("# schema=1\n");
    out.push_str(CSV_HEADER);
    out.push('\n');
    for &n in &cfg.grid {
        for r in rows.iter().filter(|r| r.n == n) {
            let cells = match &r.outcome {
                Ok(s) => [fmt_num(s.err_l1), fmt_num(s.regret_r), fmt_num(s.regret_k_max), s.samples_used.to_string()],
                Err(_) => ["NA".into(), "NA".into(), "NA".into(), "NA".into()],
            };
            let _ = writeln!(out, "{},{},{},{},{}", r.mode, r.n, r.replicate, cells.join(","), fmt_opt(r.wall_ms));
        }
    }
    for s in summarize(rows, &cfg.grid) {
        let _ = writeln!(
            out,
            "{},{},mean,{},{},{},{},{}",
            cfg.mode,
            s.n,
            fmt_num(s.err_l1),
            fmt_num(s.regret_r),
            fmt_num(s.regret_k_max),
            fmt_num(s.samples_used),
            fmt_opt(s.wall_ms)
        );
    }
    out
}
