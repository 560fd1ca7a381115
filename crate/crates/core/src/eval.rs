//! Policy evaluation (exact and by rollouts), oracles for optimal values, and
//! the reported regret and error metrics.

use crate::linalg::{norm_l1, solve_square_system, LinalgError, Matrix};
use crate::model::{draw, sample_index, CmdpInstance, EpisodicInstance, RngHandle};
use crate::par::map_replicates;
use crate::policy::{state_kernel, EpisodicPolicy, PolicyError, PolicyTable};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("policy evaluation system is singular: {0}")]
    Singular(#[from] LinalgError),
    #[error("policy covers {policy_states}x{policy_actions}, instance is {states}x{actions}")]
    Shape { policy_states: usize, policy_actions: usize, states: usize, actions: usize },
    #[error("reference occupancy has zero mass")]
    ZeroReference,
}

/// Discounted values of one policy from the initial distribution, on the value
/// scale, with per-state values attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    pub v_reward: f64,
    pub v_costs: Vec<f64>,
    pub state_reward: Vec<f64>,
    pub state_costs: Vec<Vec<f64>>,
}

impl ValueReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("value report serializes")
    }
}

fn check_shape(inst: &CmdpInstance, policy: &PolicyTable) -> Result<(), EvalError> {
    if policy.num_states != inst.num_states || policy.num_actions != inst.num_actions {
        return Err(EvalError::Shape {
            policy_states: policy.num_states,
            policy_actions: policy.num_actions,
            states: inst.num_states,
            actions: inst.num_actions,
        });
    }
    policy.validate()?;
    Ok(())
}

fn policy_average(inst: &CmdpInstance, policy: &PolicyTable, table: &[f64]) -> Vec<f64> {
    (0..inst.num_states)
        .map(|s| (0..inst.num_actions).map(|a| policy.prob(s, a) * table[inst.pair(s, a)]).sum())
        .collect()
}

/// Solves `(I − γP_π) V = r_π` for the reward and each cost channel.
pub fn evaluate_exact(inst: &CmdpInstance, policy: &PolicyTable) -> Result<ValueReport, EvalError> {
    check_shape(inst, policy)?;
    let ns = inst.num_states;
    let p = state_kernel(inst, policy);
    let system = Matrix::from_fn(ns, ns, |i, j| if i == j { 1.0 } else { 0.0 } - inst.gamma * p[(i, j)]);
    let solve = |table: &[f64]| solve_square_system(&system, &policy_average(inst, policy, table));
    let state_reward = solve(&inst.mean_reward)?;
    let state_costs = inst.mean_costs.iter().map(|c| solve(c)).collect::<Result<Vec<_>, _>>()?;
    let from_init = |v: &[f64]| v.iter().zip(&inst.init_dist).map(|(x, m)| x * m).sum::<f64>();
    Ok(ValueReport {
        v_reward: from_init(&state_reward),
        v_costs: state_costs.iter().map(|v| from_init(v)).collect(),
        state_reward,
        state_costs,
    })
}

/// Rollout estimate with standard errors; `tail` bounds the truncated part of
/// every channel and is already added to the standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub rollouts: usize,
    pub horizon: usize,
    pub mean_reward: f64,
    pub se_reward: f64,
    pub mean_costs: Vec<f64>,
    pub se_costs: Vec<f64>,
    pub tail: f64,
}

/// Smallest `T` with `γᵀ/(1−γ) ≤ tol`.
pub fn truncation_horizon(gamma: f64, tol: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    let t = ((tol * (1.0 - gamma)).ln() / gamma.ln()).ceil();
    (t.max(1.0)) as usize
}

const TAIL_TOL: f64 = 1e-4;

/// `rollouts` noisy trajectories from the initial distribution, each with its
/// own stream of `seed`, truncated at [`truncation_horizon`].
pub fn evaluate_monte_carlo(
    inst: &CmdpInstance,
    policy: &PolicyTable,
    rollouts: usize,
    seed: u64,
) -> Result<MonteCarloReport, EvalError> {
    check_shape(inst, policy)?;
    let horizon = truncation_horizon(inst.gamma, TAIL_TOL);
    let kc = inst.num_constraints();
    let returns: Vec<Vec<f64>> = map_replicates(rollouts, |i| {
        let mut rng = RngHandle::with_stream(seed, i as u64);
        let mut s = sample_index(&inst.init_dist, &mut rng);
        let mut acc = vec![0.0; kc + 1];
        let mut disc = 1.0;
        for _ in 0..horizon {
            let a = sample_index(policy.row(s), &mut rng);
            let obs = draw(inst, s, a, &mut rng);
            acc[0] += disc * obs.reward;
            for (k, c) in obs.costs.iter().enumerate() {
                acc[k + 1] += disc * c;
            }
            disc *= inst.gamma;
            s = obs.next_state;
        }
        acc
    });
    let n = rollouts as f64;
    let bound = inst
        .mean_reward
        .iter()
        .chain(inst.mean_costs.iter().flatten())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        + inst.noise;
    let tail = bound * inst.gamma.powi(horizon as i32) / (1.0 - inst.gamma);
    let stats = |ch: usize| {
        let mean = returns.iter().map(|r| r[ch]).sum::<f64>() / n;
        let var = returns.iter().map(|r| (r[ch] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt() + tail)
    };
    let (mean_reward, se_reward) = stats(0);
    let (mean_costs, se_costs) = (1..=kc).map(stats).unzip();
    Ok(MonteCarloReport { rollouts, horizon, mean_reward, se_reward, mean_costs, se_costs, tail })
}

/// Unconstrained optimal value `μ₁ᵀV*` by value iteration on the mean reward,
/// iterated until successive sup-norm changes fall below `tol·(1−γ)`.
pub fn value_iteration(inst: &CmdpInstance, tol: f64) -> (f64, Vec<f64>) {
    let (ns, na) = (inst.num_states, inst.num_actions);
    let mut v = vec![0.0; ns];
    loop {
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        let p = inst.transition(s, a);
                        inst.mean_reward[inst.pair(s, a)] + inst.gamma * p.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let change = next.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if change <= tol * (1.0 - inst.gamma) {
            break;
        }
    }
    let value = v.iter().zip(&inst.init_dist).map(|(x, m)| x * m).sum();
    (value, v)
}

/// Unconstrained optimal total reward of an episodic instance by backward
/// induction.
pub fn backward_induction(inst: &EpisodicInstance) -> f64 {
    let (ns, na) = (inst.num_states, inst.num_actions);
    let mut v = vec![0.0; ns];
    for h in (0..inst.horizon).rev() {
        v = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        let future = if h + 1 < inst.horizon {
                            inst.transition(h, s, a).iter().zip(&v).map(|(p, x)| p * x).sum::<f64>()
                        } else {
                            0.0
                        };
                        inst.rewards[h][s * na + a] + future
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
    }
    v.iter().zip(&inst.init_dist).map(|(x, m)| x * m).sum()
}

/// Expected total reward and costs of a per-period policy.
pub fn evaluate_episodic(inst: &EpisodicInstance, policy: &EpisodicPolicy) -> (f64, Vec<f64>) {
    let q = crate::policy::episodic_occupancy(inst, policy);
    let block = inst.num_pairs();
    let total = |tables: &[Vec<f64>]| -> f64 {
        (0..inst.horizon).map(|h| tables[h].iter().zip(&q[h * block..(h + 1) * block]).map(|(r, m)| r * m).sum::<f64>()).sum()
    };
    (total(&inst.rewards), inst.costs.iter().map(|c| total(c)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    /// `V_r(π*) − V_r(π)`.
    pub regret_r: f64,
    /// `V_k(π) − α_k`, value scale.
    pub regret_k: Vec<f64>,
}

impl RegretReport {
    pub fn max_cost_regret(&self) -> f64 {
        self.regret_k.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn regret_report(inst: &CmdpInstance, report: &ValueReport, optimal: &ValueReport) -> RegretReport {
    RegretReport {
        regret_r: optimal.v_reward - report.v_reward,
        regret_k: report.v_costs.iter().zip(&inst.budgets).map(|(v, b)| v - b).collect(),
    }
}

/// Mean relative ℓ₁ distance of each averaged occupancy to `q_star`.
pub fn err_metric(runs: &[Vec<f64>], q_star: &[f64]) -> Result<f64, EvalError> {
    let scale = norm_l1(q_star);
    if scale <= 0.0 {
        return Err(EvalError::ZeroReference);
    }
    if runs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = runs
        .iter()
        .map(|q| q.iter().zip(q_star).map(|(a, b)| (a - b).abs()).sum::<f64>() / scale)
        .sum();
    Ok(total / runs.len() as f64)
}
