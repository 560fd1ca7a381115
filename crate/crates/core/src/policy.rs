//! Stationary and per-period randomized policies, extraction from occupancy
//! measures, and the induced chains.

use crate::linalg::{solve_square_system, LinalgError, Matrix};
use crate::model::{CmdpInstance, EpisodicInstance};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("occupancy entry {index} is negative ({value})")]
    NegativeMass { index: usize, value: f64 },
    #[error("occupancy has {found} entries, expected {expected}")]
    WrongLength { expected: usize, found: usize },
    #[error("policy row {state} is not a distribution")]
    NotDistribution { state: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

const NEGATIVE_TOL: f64 = 1e-12;

/// `π(a|s)` stored as `probs[s*A + a]`, together with the per-state mass of
/// the occupancy it was extracted from (empty when built directly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub probs: Vec<f64>,
    pub state_mass: Vec<f64>,
}

impl PolicyTable {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
            state_mass: Vec::new(),
        }
    }

    pub fn deterministic(num_states: usize, num_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; num_states * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * num_actions + a] = 1.0;
        }
        Self { num_states, num_actions, probs, state_mass: Vec::new() }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, PolicyError> {
        let num_actions = rows.first().map_or(0, |r| r.len());
        let p = Self {
            num_states: rows.len(),
            num_actions,
            probs: rows.iter().flatten().copied().collect(),
            state_mass: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.probs.len() != self.num_states * self.num_actions {
            return Err(PolicyError::WrongLength {
                expected: self.num_states * self.num_actions,
                found: self.probs.len(),
            });
        }
        for s in 0..self.num_states {
            let row = self.row(s);
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| *p < -NEGATIVE_TOL || !p.is_finite()) || (total - 1.0).abs() > 1e-9 {
                return Err(PolicyError::NotDistribution { state: s });
            }
        }
        Ok(())
    }
}

/// `π(a|s) = q(s,a) / Σ_a' q(s,a')`, uniform where the state has no mass.
pub fn extract_policy(q: &[f64], num_states: usize, num_actions: usize) -> Result<PolicyTable, PolicyError> {
    if q.len() != num_states * num_actions {
        return Err(PolicyError::WrongLength { expected: num_states * num_actions, found: q.len() });
    }
    if let Some((index, &value)) = q.iter().enumerate().find(|(_, v)| **v < -NEGATIVE_TOL || v.is_nan()) {
        return Err(PolicyError::NegativeMass { index, value });
    }
    let mut probs = vec![0.0; q.len()];
    let mut state_mass = vec![0.0; num_states];
    for s in 0..num_states {
        let row = &q[s * num_actions..(s + 1) * num_actions];
        let mass: f64 = row.iter().map(|v| v.max(0.0)).sum();
        state_mass[s] = mass;
        for a in 0..num_actions {
            probs[s * num_actions + a] = if mass > 0.0 { row[a].max(0.0) / mass } else { 1.0 / num_actions as f64 };
        }
    }
    Ok(PolicyTable { num_states, num_actions, probs, state_mass })
}

/// One policy per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicPolicy {
    pub periods: Vec<PolicyTable>,
}

/// Per-period extraction from a period-major occupancy `q[h*S*A + s*A + a]`.
pub fn extract_episodic_policy(
    q: &[f64],
    num_states: usize,
    num_actions: usize,
    horizon: usize,
) -> Result<EpisodicPolicy, PolicyError> {
    let block = num_states * num_actions;
    if q.len() != block * horizon {
        return Err(PolicyError::WrongLength { expected: block * horizon, found: q.len() });
    }
    let periods = q
        .chunks(block)
        .map(|qh| extract_policy(qh, num_states, num_actions))
        .collect::<Result<_, _>>()?;
    Ok(EpisodicPolicy { periods })
}

/// State-to-state kernel `P_π(s, s') = Σ_a π(a|s) P(s'|s,a)`.
pub fn state_kernel(inst: &CmdpInstance, policy: &PolicyTable) -> Matrix {
    let ns = inst.num_states;
    let mut p = Matrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..inst.num_actions {
            let w = policy.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for (t, pt) in inst.transition(s, a).iter().enumerate() {
                p[(s, t)] += w * pt;
            }
        }
    }
    p
}

/// Normalized discounted occupancy `q(s,a) = (1−γ) Σ_t γᵗ Pr(s_t=s, a_t=a)`.
pub fn occupancy(inst: &CmdpInstance, policy: &PolicyTable) -> Result<Vec<f64>, PolicyError> {
    let ns = inst.num_states;
    let p = state_kernel(inst, policy);
    // d = (1−γ) (I − γ P_πᵀ)⁻¹ μ₁
    let m = Matrix::from_fn(ns, ns, |i, j| if i == j { 1.0 } else { 0.0 } - inst.gamma * p[(j, i)]);
    let rhs: Vec<f64> = inst.init_dist.iter().map(|v| (1.0 - inst.gamma) * v).collect();
    let d = solve_square_system(&m, &rhs)?;
    let mut q = vec![0.0; inst.num_pairs()];
    for s in 0..ns {
        for a in 0..inst.num_actions {
            q[inst.pair(s, a)] = d[s].max(0.0) * policy.prob(s, a);
        }
    }
    Ok(q)
}

/// Per-period state-action occupancy of an episodic policy (each period sums
/// to one).
pub fn episodic_occupancy(inst: &EpisodicInstance, policy: &EpisodicPolicy) -> Vec<f64> {
    let (ns, na) = (inst.num_states, inst.num_actions);
    let mut out = Vec::with_capacity(ns * na * inst.horizon);
    let mut dist = inst.init_dist.clone();
    for h in 0..inst.horizon {
        let pol = &policy.periods[h];
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let m = dist[s] * pol.prob(s, a);
                out.push(m);
                if m > 0.0 {
                    for (t, pt) in inst.transition(h, s, a).iter().enumerate() {
                        next[t] += m * pt;
                    }
                }
            }
        }
        dist = next;
    }
    out
}
