//! Adaptive resolving on a fixed basis: the generative-model procedure, the
//! off-policy sampler and the on-policy variant.

use crate::basis::{identify_basis_empirical, identify_basis_true, BasisError};
use crate::estimation::{ConfidenceParams, EmpiricalEstimates, EstimationError};
use crate::linalg::{norm_l1, solve_square_pivoted, solve_square_system, Matrix};
use crate::lp::{build_infinite_lp, lp_budgets, BasisPair};
use crate::model::{draw, sample_index, CmdpInstance, RngHandle, Sample};
use crate::policy::{extract_policy, state_kernel, PolicyError, PolicyTable};
use crate::projection::{project_capped_simplex, ProjectionError};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResolveError {
    #[error("basis identification failed: {0}")]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("step budget of {steps} exhausted; uncovered pairs {uncovered:?}")]
    Coverage { steps: u64, uncovered: Vec<(usize, usize)> },
    #[error("invalid run configuration: {0}")]
    Config(String),
}

/// Where the basis used for resolving comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BasisSource {
    /// Sample-based identification on the phase-one data with failure
    /// probability `ε_target² / (K·|S||A|)`.
    Empirical { epsilon_target: f64 },
    /// Exact identification on the true program (the large-sample limit).
    TrueLp,
    Supplied(BasisPair),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolveConfig {
    /// Phase-one samples per pair (generative / off-policy) or steps (on-policy).
    pub n1: u64,
    /// Resolving rounds.
    pub n2: u64,
    pub basis: BasisSource,
    /// Keep every round's solution in the output.
    pub keep_rounds: bool,
    /// Record one trace row per round; errors are measured against this point
    /// when given.
    pub trace: bool,
    pub q_star: Option<Vec<f64>>,
    /// Cap on environment steps for any single walk (off/on-policy).
    pub step_cap: u64,
}

impl ResolveConfig {
    pub fn new(n1: u64, n2: u64, basis: BasisSource) -> Self {
        Self { n1, n2, basis, keep_rounds: false, trace: false, q_star: None, step_cap: 50_000_000 }
    }
}

/// Per-column realized data used by one ledger update: costs on the kept cost
/// rows and the flow coefficients `δ(s',s) − γ·1{s' = next}` on the kept flow
/// rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedColumn {
    pub costs: Vec<f64>,
    pub flow: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RunEvent {
    /// The round's system was singular; the previous solution was reused.
    SingularSystem { round: u64, sigma_min: f64 },
    /// The walk limit was doubled during a round.
    WalkLimitDoubled { round: u64, limit: u64 },
    /// Pairs that stayed unvisited; their pool means stood in for samples.
    MeanFallback { round: u64, pairs: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: u64,
    pub err_l1: Option<f64>,
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    pub projection_active: bool,
    pub samples: u64,
}

/// Resolving state for one run.
#[derive(Debug, Clone)]
pub struct ResolveState {
    /// Next round, 1-based.
    pub n: u64,
    pub n2: u64,
    pub basis: BasisPair,
    pub gamma: f64,
    pub alpha_init: Vec<f64>,
    pub mu_init: Vec<f64>,
    /// Running sums `Σ_m Cᵐ qᵐ` and `Σ_m Bᵐ qᵐ` over completed rounds.
    pub consumed_alpha: Vec<f64>,
    pub consumed_mu: Vec<f64>,
    /// Sample pool the round systems are estimated from.
    pub pool: EmpiricalEstimates,
    pub prev_q: Vec<f64>,
    /// Lower bound imposed by the projection on the support.
    pub lower: f64,
    pub events: Vec<RunEvent>,
    pub projection_active_rounds: u64,
}

impl ResolveState {
    /// Ledgers start at `N₂·α` over the kept cost rows and `N₂·μ` over the kept
    /// flow rows (LP scale).
    pub fn new(inst: &CmdpInstance, basis: BasisPair, n2: u64, pool: EmpiricalEstimates, lower: f64) -> Self {
        let budgets = lp_budgets(inst);
        let alpha_init = basis.rows_cost.iter().map(|&k| n2 as f64 * budgets[k]).collect();
        let mu_init =
            basis.rows_flow.iter().map(|&s| n2 as f64 * (1.0 - inst.gamma) * inst.init_dist[s]).collect();
        let width = basis.cols.len();
        Self {
            n: 1,
            n2,
            gamma: inst.gamma,
            consumed_alpha: vec![0.0; basis.rows_cost.len()],
            consumed_mu: vec![0.0; basis.rows_flow.len()],
            alpha_init,
            mu_init,
            basis,
            pool,
            prev_q: vec![0.0; width],
            lower,
            events: Vec::new(),
            projection_active_rounds: 0,
        }
    }

    pub fn alpha_remaining(&self) -> Vec<f64> {
        self.alpha_init.iter().zip(&self.consumed_alpha).map(|(a, c)| a - c).collect()
    }

    pub fn mu_remaining(&self) -> Vec<f64> {
        self.mu_init.iter().zip(&self.consumed_mu).map(|(a, c)| a - c).collect()
    }

    /// Pool estimate of `[C(J₁,I); B(J₂,I)]`.
    pub fn estimated_matrix(&self) -> Matrix {
        let na = self.pool.num_actions;
        let cols = &self.basis.cols;
        let mut m = Matrix::zeros(self.basis.num_rows(), cols.len());
        for (j, &col) in cols.iter().enumerate() {
            for (r, &k) in self.basis.rows_cost.iter().enumerate() {
                m[(r, j)] = self.pool.mean_costs[k][col];
            }
            let p = self.pool.transition_freq(col);
            let from = col / na;
            let off = self.basis.rows_cost.len();
            for (r, &s) in self.basis.rows_flow.iter().enumerate() {
                m[(off + r, j)] = if s == from { 1.0 } else { 0.0 } - self.gamma * p[s];
            }
        }
        m
    }

    /// Solves the round system against the remaining ledgers spread over the
    /// remaining rounds, then projects. Returns the round solution on `I` and
    /// whether the projection moved it.
    pub fn plan(&mut self) -> Result<(Vec<f64>, bool), ResolveError> {
        let left = (self.n2 - self.n + 1) as f64;
        let rhs: Vec<f64> =
            self.alpha_remaining().into_iter().chain(self.mu_remaining()).map(|v| v / left).collect();
        let a = self.estimated_matrix();
        let raw = match solve_square_pivoted(&a, &rhs) {
            Ok(x) => x,
            Err(err) => {
                let sigma_min = match err {
                    crate::linalg::LinalgError::Singular { sigma_min, .. } => sigma_min,
                    _ => 0.0,
                };
                self.events.push(RunEvent::SingularSystem { round: self.n, sigma_min });
                self.prev_q.clone()
            }
        };
        let support: Vec<usize> = (0..raw.len()).collect();
        let q = if raw.is_empty() {
            raw.clone()
        } else {
            project_capped_simplex(&raw, 2.0, &support, Some(self.lower))?
        };
        let active = q.iter().zip(&raw).any(|(x, y)| x != y);
        if active {
            self.projection_active_rounds += 1;
        }
        Ok((q, active))
    }

    /// Realized column data from one sample of column `col`.
    pub fn realize(&self, col: usize, sample: &Sample) -> RealizedColumn {
        let from = col / self.pool.num_actions;
        RealizedColumn {
            costs: self.basis.rows_cost.iter().map(|&k| sample.costs[k]).collect(),
            flow: self
                .basis
                .rows_flow
                .iter()
                .map(|&s| {
                    (if s == from { 1.0 } else { 0.0 }) - if s == sample.next_state { self.gamma } else { 0.0 }
                })
                .collect(),
        }
    }

    /// Stand-in column data from the pool means.
    pub fn expected_column(&self, col: usize) -> RealizedColumn {
        let from = col / self.pool.num_actions;
        let p = self.pool.transition_freq(col);
        RealizedColumn {
            costs: self.basis.rows_cost.iter().map(|&k| self.pool.mean_costs[k][col]).collect(),
            flow: self
                .basis
                .rows_flow
                .iter()
                .map(|&s| (if s == from { 1.0 } else { 0.0 }) - self.gamma * p[s])
                .collect(),
        }
    }

    /// Ledger update with one realized column per basis column, then advance.
    pub fn apply(&mut self, q: &[f64], realized: &[RealizedColumn]) {
        for (k, slot) in self.consumed_alpha.iter_mut().enumerate() {
            let spent: f64 = realized.iter().zip(q).map(|(r, qi)| r.costs[k] * qi).sum();
            *slot += spent;
        }
        for (s, slot) in self.consumed_mu.iter_mut().enumerate() {
            let used: f64 = realized.iter().zip(q).map(|(r, qi)| r.flow[s] * qi).sum();
            *slot += used;
        }
        self.prev_q = q.to_vec();
        self.n += 1;
    }
}

/// One round: plan, obtain one sample per basis column from `sampler`, update.
pub fn resolve_step(
    state: &mut ResolveState,
    sampler: &mut dyn FnMut(usize) -> Sample,
) -> Result<(Vec<f64>, bool), ResolveError> {
    let (q, active) = state.plan()?;
    let cols = state.basis.cols.clone();
    let mut realized = Vec::with_capacity(cols.len());
    for &col in &cols {
        let sample = sampler(col);
        realized.push(state.realize(col, &sample));
        state.pool.update(col / state.pool.num_actions, col % state.pool.num_actions, &sample);
    }
    state.apply(&q, &realized);
    Ok((q, active))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub basis: BasisPair,
    /// Round solutions on the basis columns, when kept.
    pub rounds: Vec<Vec<f64>>,
    /// Average round solution, full length, zero off the basis.
    pub q_bar: Vec<f64>,
    pub policy: PolicyTable,
    /// Generative queries or environment steps, including phase one.
    pub samples_used: u64,
    pub phase1_samples: u64,
    /// `Σ_n r̂ᵀqⁿ` with the true mean rewards.
    pub reward_sum: f64,
    pub alpha_init: Vec<f64>,
    pub mu_init: Vec<f64>,
    pub consumed_alpha: Vec<f64>,
    pub consumed_mu: Vec<f64>,
    pub alpha_final: Vec<f64>,
    pub mu_final: Vec<f64>,
    pub projection_active_rounds: u64,
    pub events: Vec<RunEvent>,
    pub trace: Vec<TraceRow>,
    /// States visited during the resolving phase (on-policy runs).
    pub visited_states: Vec<bool>,
    pub lower_bound: f64,
}

impl RunOutput {
    /// `N₂·V − Σ r̂ᵀqⁿ` for an LP value `v`.
    pub fn reward_gap(&self, v: f64, n2: u64) -> f64 {
        n2 as f64 * v - self.reward_sum
    }

    pub fn max_alpha_residual(&self) -> f64 {
        self.alpha_final.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Writes one CSV row per round.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("# schema=1\n");
    let na = trace.first().map_or(0, |r| r.alpha.len());
    let nm = trace.first().map_or(0, |r| r.mu.len());
    let mut header = vec!["n".to_string(), "err_l1".to_string()];
    header.extend((0..na).map(|k| format!("alpha_{k}")));
    header.extend((0..nm).map(|s| format!("mu_{s}")));
    header.push("projection_active".into());
    header.push("samples".into());
    let _ = writeln!(out, "{}", header.join(","));
    for r in trace {
        let mut cells = vec![r.round.to_string(), r.err_l1.map_or("NA".into(), |e| format!("{e:.9e}"))];
        cells.extend(r.alpha.iter().chain(&r.mu).map(|v| format!("{v:.9e}")));
        cells.push(u8::from(r.projection_active).to_string());
        cells.push(r.samples.to_string());
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

fn resolve_basis(
    inst: &CmdpInstance,
    source: &BasisSource,
    pool: &EmpiricalEstimates,
) -> Result<BasisPair, ResolveError> {
    match source {
        BasisSource::TrueLp => Ok(identify_basis_true(&build_infinite_lp(inst))?.basis),
        BasisSource::Supplied(b) => Ok(b.clone()),
        BasisSource::Empirical { epsilon_target } => {
            let k = inst.num_constraints().max(1) as f64;
            let eps = epsilon_target * epsilon_target / (k * inst.num_pairs() as f64);
            let params = ConfidenceParams::new(pool.min_count(), eps)?;
            let id = identify_basis_empirical(pool, params, inst.scale, inst.gamma, &lp_budgets(inst), &inst.init_dist)?;
            Ok(id.basis)
        }
    }
}

fn check_config(inst: &CmdpInstance, cfg: &ResolveConfig) -> Result<(), ResolveError> {
    if cfg.n1 == 0 || cfg.n2 == 0 {
        return Err(ResolveError::Config("N1 and N2 must be at least 1".into()));
    }
    if let Some(q) = &cfg.q_star {
        if q.len() != inst.num_pairs() {
            return Err(ResolveError::Config("reference occupancy has the wrong length".into()));
        }
    }
    Ok(())
}

/// Drives the rounds with a caller-supplied collector that returns realized
/// column data for the round and the number of queries/steps it spent.
fn drive(
    inst: &CmdpInstance,
    cfg: &ResolveConfig,
    state: &mut ResolveState,
    phase1_samples: u64,
    collect: &mut dyn FnMut(&mut ResolveState, &[f64]) -> Result<(Vec<RealizedColumn>, u64), ResolveError>,
) -> Result<RunOutput, ResolveError> {
    let cols = state.basis.cols.clone();
    let mut sum_q = vec![0.0; cols.len()];
    let mut reward_sum = 0.0;
    let mut rounds = Vec::new();
    let mut trace = Vec::new();
    let mut samples = phase1_samples;
    for _ in 0..cfg.n2 {
        let round = state.n;
        let (q, active) = state.plan()?;
        let (realized, spent) = collect(state, &q)?;
        samples += spent;
        state.apply(&q, &realized);
        for (acc, v) in sum_q.iter_mut().zip(&q) {
            *acc += v;
        }
        reward_sum += cols.iter().zip(&q).map(|(&c, v)| inst.mean_reward[c] * v).sum::<f64>();
        if cfg.trace {
            let err_l1 = cfg.q_star.as_ref().map(|qs| {
                let mut full = vec![0.0; inst.num_pairs()];
                for (&c, v) in cols.iter().zip(&q) {
                    full[c] = *v;
                }
                full.iter().zip(qs).map(|(a, b)| (a - b).abs()).sum()
            });
            trace.push(TraceRow {
                round,
                err_l1,
                alpha: state.alpha_remaining(),
                mu: state.mu_remaining(),
                projection_active: active,
                samples,
            });
        }
        if cfg.keep_rounds {
            rounds.push(q);
        }
    }
    let mut q_bar = vec![0.0; inst.num_pairs()];
    for (&c, v) in cols.iter().zip(&sum_q) {
        q_bar[c] = v / cfg.n2 as f64;
    }
    let policy = extract_policy(&q_bar, inst.num_states, inst.num_actions)?;
    Ok(RunOutput {
        basis: state.basis.clone(),
        rounds,
        q_bar,
        policy,
        samples_used: samples,
        phase1_samples,
        reward_sum,
        alpha_init: state.alpha_init.clone(),
        mu_init: state.mu_init.clone(),
        consumed_alpha: state.consumed_alpha.clone(),
        consumed_mu: state.consumed_mu.clone(),
        alpha_final: state.alpha_remaining(),
        mu_final: state.mu_remaining(),
        projection_active_rounds: state.projection_active_rounds,
        events: state.events.clone(),
        trace,
        visited_states: Vec::new(),
        lower_bound: state.lower,
    })
}

/// Generative-model procedure: `N1` queries per pair, basis from `cfg.basis`,
/// then `N2` resolving rounds with one query per basis column each.
pub fn run_adaptive_resolving(inst: &CmdpInstance, cfg: &ResolveConfig, rng: &mut RngHandle) -> Result<RunOutput, ResolveError> {
    check_config(inst, cfg)?;
    let mut pool = EmpiricalEstimates::new(inst.num_states, inst.num_actions, inst.num_constraints());
    for s in 0..inst.num_states {
        for a in 0..inst.num_actions {
            for _ in 0..cfg.n1 {
                let sample = draw(inst, s, a, rng);
                pool.update(s, a, &sample);
            }
        }
    }
    let phase1 = cfg.n1 * inst.num_pairs() as u64;
    let basis = resolve_basis(inst, &cfg.basis, &pool)?;
    let mut state = ResolveState::new(inst, basis, cfg.n2, pool, 0.0);
    let mut collect = |st: &mut ResolveState, _q: &[f64]| {
        let cols = st.basis.cols.clone();
        let mut realized = Vec::with_capacity(cols.len());
        for &col in &cols {
            let (s, a) = (col / inst.num_actions, col % inst.num_actions);
            let sample = draw(inst, s, a, rng);
            realized.push(st.realize(col, &sample));
            st.pool.update(s, a, &sample);
        }
        Ok((realized, cols.len() as u64))
    };
    drive(inst, cfg, &mut state, phase1, &mut collect)
}

fn step(inst: &CmdpInstance, policy: &PolicyTable, s: usize, rng: &mut RngHandle) -> (usize, Sample) {
    let a = sample_index(policy.row(s), rng);
    (a, draw(inst, s, a, rng))
}

/// Walks under `policy` from `*state` until every column in `targets` is
/// visited or `limit` steps pass. Every step lands in `pool`; the first visit
/// of each target is returned.
fn walk_until_covered(
    inst: &CmdpInstance,
    policy: &PolicyTable,
    state: &mut usize,
    targets: &[usize],
    limit: u64,
    pool: &mut EmpiricalEstimates,
    rng: &mut RngHandle,
    visited: Option<&mut Vec<bool>>,
) -> (Vec<Option<Sample>>, u64) {
    let mut first: Vec<Option<Sample>> = vec![None; targets.len()];
    let mut missing = targets.len();
    let mut steps = 0;
    let mut visited = visited;
    while missing > 0 && steps < limit {
        let s = *state;
        if let Some(v) = visited.as_deref_mut() {
            v[s] = true;
        }
        let (a, sample) = step(inst, policy, s, rng);
        steps += 1;
        let col = inst.pair(s, a);
        if let Some(pos) = targets.iter().position(|&c| c == col) {
            if first[pos].is_none() {
                first[pos] = Some(sample.clone());
                missing -= 1;
            }
        }
        pool.update(s, a, &sample);
        *state = sample.next_state;
    }
    (first, steps)
}

fn uncovered_pairs(inst: &CmdpInstance, pool: &EmpiricalEstimates, n1: u64) -> Vec<(usize, usize)> {
    (0..inst.num_pairs())
        .filter(|&c| pool.counts[c] < n1)
        .map(|c| (c / inst.num_actions, c % inst.num_actions))
        .collect()
}

/// Phase one by walking: every pair must reach `n1` visits (after at least
/// `min_steps` steps) within the step cap.
fn walk_phase_one(
    inst: &CmdpInstance,
    policy: &PolicyTable,
    n1: u64,
    min_steps: u64,
    cap: u64,
    rng: &mut RngHandle,
) -> Result<(EmpiricalEstimates, usize, u64), ResolveError> {
    let mut pool = EmpiricalEstimates::new(inst.num_states, inst.num_actions, inst.num_constraints());
    let mut s = sample_index(&inst.init_dist, rng);
    let mut steps = 0u64;
    while steps < min_steps || pool.min_count() < n1 {
        if steps >= cap {
            return Err(ResolveError::Coverage { steps, uncovered: uncovered_pairs(inst, &pool, n1) });
        }
        let (a, sample) = step(inst, policy, s, rng);
        pool.update(s, a, &sample);
        s = sample.next_state;
        steps += 1;
    }
    Ok((pool, s, steps))
}

/// Off-policy sampling: phase one walks the behavior chain until every pair
/// has `N1` samples; each round walks it until every basis column is visited.
pub fn run_offpolicy(
    inst: &CmdpInstance,
    behavior: &PolicyTable,
    cfg: &ResolveConfig,
    rng: &mut RngHandle,
) -> Result<RunOutput, ResolveError> {
    check_config(inst, cfg)?;
    behavior.validate()?;
    let (pool, mut s, phase1) = walk_phase_one(inst, behavior, cfg.n1, 0, cfg.step_cap, rng)?;
    let basis = resolve_basis(inst, &cfg.basis, &pool)?;
    let mut state = ResolveState::new(inst, basis, cfg.n2, pool, 0.0);
    let cap = cfg.step_cap;
    let mut collect = |st: &mut ResolveState, _q: &[f64]| {
        let cols = st.basis.cols.clone();
        let (first, steps) = walk_until_covered(inst, behavior, &mut s, &cols, cap, &mut st.pool, rng, None);
        if first.iter().any(Option::is_none) {
            let uncovered = cols
                .iter()
                .zip(&first)
                .filter(|(_, f)| f.is_none())
                .map(|(&c, _)| (c / inst.num_actions, c % inst.num_actions))
                .collect();
            return Err(ResolveError::Coverage { steps, uncovered });
        }
        let realized = cols.iter().zip(&first).map(|(&c, f)| st.realize(c, f.as_ref().expect("covered"))).collect();
        Ok((realized, steps))
    };
    drive(inst, cfg, &mut state, phase1, &mut collect)
}

/// On-policy knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct OnPolicyConfig {
    /// Initial per-round walk limit.
    pub n3: u64,
    /// Lower bound on basis entries; estimated from phase one when absent.
    pub xi_prime: Option<f64>,
    /// Limit doublings within one round before falling back to pool means.
    pub max_doublings: u32,
}

impl Default for OnPolicyConfig {
    fn default() -> Self {
        Self { n3: 64, xi_prime: None, max_doublings: 16 }
    }
}

/// `max(1e−4, ξ̂/4)` with `ξ̂` the smallest entry of the basic solution of the
/// pool's estimated system, clipped so the projection set is nonempty.
pub fn auto_xi_prime(state: &ResolveState, lp_budgets: &[f64], mu: &[f64]) -> f64 {
    let rhs: Vec<f64> =
        state.basis.rows_cost.iter().map(|&k| lp_budgets[k]).chain(state.basis.rows_flow.iter().map(|&s| mu[s])).collect();
    let xi_hat = solve_square_system(&state.estimated_matrix(), &rhs)
        .ok()
        .and_then(|x| x.into_iter().reduce(f64::min))
        .unwrap_or(0.0);
    let width = state.basis.cols.len().max(1) as f64;
    (xi_hat / 4.0).max(1e-4).min(2.0 / width)
}

/// On-policy variant: phase one follows the uniform policy for `N1` steps (and
/// on until every pair is seen), then each round follows the policy induced by
/// its solution until every basis column is visited.
pub fn run_onpolicy(
    inst: &CmdpInstance,
    cfg: &ResolveConfig,
    on: &OnPolicyConfig,
    rng: &mut RngHandle,
) -> Result<RunOutput, ResolveError> {
    check_config(inst, cfg)?;
    if on.n3 == 0 {
        return Err(ResolveError::Config("N3 must be at least 1".into()));
    }
    let uniform = PolicyTable::uniform(inst.num_states, inst.num_actions);
    let (pool, _, phase1) = walk_phase_one(inst, &uniform, 1, cfg.n1, cfg.step_cap, rng)?;
    let basis = resolve_basis(inst, &cfg.basis, &pool)?;
    let mut state = ResolveState::new(inst, basis, cfg.n2, pool, 0.0);
    let mu: Vec<f64> = inst.init_dist.iter().map(|m| (1.0 - inst.gamma) * m).collect();
    let xi = match on.xi_prime {
        Some(x) => x,
        None => auto_xi_prime(&state, &lp_budgets(inst), &mu),
    };
    state.lower = xi;
    let mut s = state.basis.cols.first().map_or(0, |&c| c / inst.num_actions);
    let mut visited = vec![false; inst.num_states];
    let mut limit = on.n3;
    let mut events = Vec::new();
    let cols = state.basis.cols.clone();
    let mut collect = |st: &mut ResolveState, q: &[f64]| {
        let mut full = vec![0.0; inst.num_pairs()];
        for (&c, v) in cols.iter().zip(q) {
            full[c] = *v;
        }
        let policy = extract_policy(&full, inst.num_states, inst.num_actions)?;
        let mut firsts: Vec<Option<Sample>> = vec![None; cols.len()];
        let mut spent = 0;
        let mut doublings = 0;
        loop {
            let pending: Vec<usize> = cols.iter().zip(&firsts).filter(|(_, f)| f.is_none()).map(|(&c, _)| c).collect();
            let budget = limit.saturating_sub(spent);
            let (got, steps) =
                walk_until_covered(inst, &policy, &mut s, &pending, budget, &mut st.pool, rng, Some(&mut visited));
            spent += steps;
            for (c, g) in pending.iter().zip(got) {
                let pos = cols.iter().position(|x| x == c).expect("pending column is a basis column");
                firsts[pos] = g;
            }
            if firsts.iter().all(Option::is_some) || doublings >= on.max_doublings {
                break;
            }
            limit = limit.saturating_mul(2);
            doublings += 1;
            events.push(RunEvent::WalkLimitDoubled { round: st.n, limit });
        }
        let mut fallback = Vec::new();
        let realized = cols
            .iter()
            .zip(&firsts)
            .map(|(&c, f)| match f {
                Some(sample) => st.realize(c, sample),
                None => {
                    fallback.push((c / inst.num_actions, c % inst.num_actions));
                    st.expected_column(c)
                }
            })
            .collect();
        if !fallback.is_empty() {
            events.push(RunEvent::MeanFallback { round: st.n, pairs: fallback });
        }
        Ok((realized, spent))
    };
    let mut out = drive(inst, cfg, &mut state, phase1, &mut collect)?;
    out.events.extend(events);
    out.visited_states = visited;
    Ok(out)
}

/// Stationary distribution of a row-stochastic matrix (unique when the chain
/// is irreducible).
pub fn stationary_distribution(p: &Matrix) -> Option<Vec<f64>> {
    let n = p.nrows();
    // (Pᵀ − I) d = 0 with the last equation replaced by Σd = 1.
    let mut m = Matrix::from_fn(n, n, |i, j| p[(j, i)] - if i == j { 1.0 } else { 0.0 });
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    solve_square_system(&m, &rhs).ok()
}

/// Smallest stationary mass of any state-action pair under `behavior`.
pub fn behavior_mu_min(inst: &CmdpInstance, behavior: &PolicyTable) -> Option<f64> {
    let d = stationary_distribution(&state_kernel(inst, behavior))?;
    let mut min = f64::INFINITY;
    for s in 0..inst.num_states {
        for a in 0..inst.num_actions {
            min = min.min(d[s] * behavior.prob(s, a));
        }
    }
    Some(min)
}

/// `‖q̄ − q*‖₁ / ‖q*‖₁`.
pub fn relative_l1(q_bar: &[f64], q_star: &[f64]) -> f64 {
    let diff: f64 = q_bar.iter().zip(q_star).map(|(a, b)| (a - b).abs()).sum();
    diff / norm_l1(q_star)
}
