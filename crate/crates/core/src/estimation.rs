//! Streaming empirical estimates, Hoeffding radii and the value gap bounds.

use crate::lp::{assemble_discounted, StandardLp};
use crate::model::Sample;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("no samples for pairs {0:?}")]
    Uncovered(Vec<(usize, usize)>),
    #[error("minimum budget is zero with {0} cost constraints; the gap bound is undefined")]
    ZeroBudget(usize),
    #[error("invalid confidence parameters: n0={n0}, epsilon={epsilon}")]
    BadParams { n0: u64, epsilon: f64 },
    #[error("estimate shapes differ")]
    ShapeMismatch,
}

/// Per-pair sample counts, running means and transition counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalEstimates {
    pub num_states: usize,
    pub num_actions: usize,
    pub counts: Vec<u64>,
    pub mean_reward: Vec<f64>,
    pub mean_costs: Vec<Vec<f64>>,
    /// `transition_counts[col*S + s']`.
    pub transition_counts: Vec<u64>,
}

impl EmpiricalEstimates {
    pub fn new(num_states: usize, num_actions: usize, num_constraints: usize) -> Self {
        let n = num_states * num_actions;
        Self {
            num_states,
            num_actions,
            counts: vec![0; n],
            mean_reward: vec![0.0; n],
            mean_costs: vec![vec![0.0; n]; num_constraints],
            transition_counts: vec![0; n * num_states],
        }
    }

    pub fn num_constraints(&self) -> usize {
        self.mean_costs.len()
    }

    pub fn update(&mut self, s: usize, a: usize, sample: &Sample) {
        let col = s * self.num_actions + a;
        self.counts[col] += 1;
        let n = self.counts[col] as f64;
        self.mean_reward[col] += (sample.reward - self.mean_reward[col]) / n;
        for (k, c) in sample.costs.iter().enumerate() {
            self.mean_costs[k][col] += (c - self.mean_costs[k][col]) / n;
        }
        self.transition_counts[col * self.num_states + sample.next_state] += 1;
    }

    /// Count-weighted combination of two estimates over the same pairs.
    pub fn merge(&mut self, other: &EmpiricalEstimates) -> Result<(), EstimationError> {
        if self.num_states != other.num_states
            || self.num_actions != other.num_actions
            || self.num_constraints() != other.num_constraints()
        {
            return Err(EstimationError::ShapeMismatch);
        }
        for col in 0..self.counts.len() {
            let (na, nb) = (self.counts[col] as f64, other.counts[col] as f64);
            if nb == 0.0 {
                continue;
            }
            let w = nb / (na + nb);
            self.mean_reward[col] += w * (other.mean_reward[col] - self.mean_reward[col]);
            for k in 0..self.num_constraints() {
                self.mean_costs[k][col] += w * (other.mean_costs[k][col] - self.mean_costs[k][col]);
            }
            self.counts[col] += other.counts[col];
        }
        for (t, o) in self.transition_counts.iter_mut().zip(&other.transition_counts) {
            *t += o;
        }
        Ok(())
    }

    /// `P̄(·|col)`; all zeros when the pair is unsampled.
    pub fn transition_freq(&self, col: usize) -> Vec<f64> {
        let n = self.counts[col];
        let row = &self.transition_counts[col * self.num_states..(col + 1) * self.num_states];
        if n == 0 {
            return vec![0.0; self.num_states];
        }
        row.iter().map(|&c| c as f64 / n as f64).collect()
    }

    pub fn transitions_flat(&self) -> Vec<f64> {
        (0..self.counts.len()).flat_map(|c| self.transition_freq(c)).collect()
    }

    pub fn uncovered(&self) -> Vec<(usize, usize)> {
        (0..self.counts.len())
            .filter(|&c| self.counts[c] == 0)
            .map(|c| (c / self.num_actions, c % self.num_actions))
            .collect()
    }

    pub fn min_count(&self) -> u64 {
        self.counts.iter().copied().min().unwrap_or(0)
    }

    pub fn total_samples(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceParams {
    pub epsilon: f64,
    pub n0: u64,
}

impl ConfidenceParams {
    pub fn new(n0: u64, epsilon: f64) -> Result<Self, EstimationError> {
        if n0 == 0 || !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(EstimationError::BadParams { n0, epsilon });
        }
        Ok(Self { epsilon, n0 })
    }

    pub fn rad(&self) -> f64 {
        rad(self.n0, self.epsilon)
    }
}

/// `√(log(2/ε) / (2 n0))`.
pub fn rad(n0: u64, epsilon: f64) -> f64 {
    ((2.0 / epsilon).ln() / (2.0 * n0 as f64)).sqrt()
}

/// Radius multiplier for observations spanning an interval of width `scale`.
/// Transition frequencies always live in [0,1], so the multiplier is at least 1.
pub fn radius_multiplier(scale: f64) -> f64 {
    scale.max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaps {
    pub gap1: f64,
    pub gap2: f64,
}

/// Discounted-case gap bounds from a radius. `min_budget` is the smallest
/// LP-scale budget; ignored when there are no constraints.
pub fn gaps_from_radius(
    radius: f64,
    num_states: usize,
    gamma: f64,
    num_constraints: usize,
    min_budget: f64,
) -> Result<Gaps, EstimationError> {
    if num_constraints == 0 {
        return Ok(Gaps { gap1: radius, gap2: 0.0 });
    }
    if !(min_budget > 0.0) {
        return Err(EstimationError::ZeroBudget(num_constraints));
    }
    let s = num_states as f64;
    let linear = 2.0 * radius / min_budget * (1.0 + s / (1.0 - gamma));
    let quadratic = radius * radius / min_budget * (s + s * s / (1.0 - gamma));
    Ok(Gaps { gap1: radius, gap2: linear + quadratic })
}

pub fn gaps(
    n0: u64,
    epsilon: f64,
    num_states: usize,
    gamma: f64,
    num_constraints: usize,
    min_budget: f64,
) -> Result<Gaps, EstimationError> {
    let p = ConfidenceParams::new(n0, epsilon)?;
    gaps_from_radius(p.rad(), num_states, gamma, num_constraints, min_budget)
}

/// Episodic gap bounds. The second gap depends on the smallest singular value
/// of the optimal basis matrix.
pub fn gaps_episodic(
    radius: f64,
    num_states: usize,
    horizon: usize,
    num_constraints: usize,
    sigma_star: f64,
) -> Gaps {
    let (s, h, k) = (num_states as f64, horizon as f64, num_constraints as f64);
    let gap2 = radius * 2.0 * (k + s * h) / sigma_star + radius * radius * (k * s + s * s * h) / sigma_star;
    Gaps { gap1: h * radius, gap2 }
}

/// Slack used by the episodic empirical program.
pub fn episodic_slack(radius: f64, horizon: usize) -> f64 {
    radius * horizon as f64
}

/// Empirical discounted program with LP-scale `budgets` and `slack` recorded.
pub fn build_empirical_lp(
    est: &EmpiricalEstimates,
    gamma: f64,
    budgets: &[f64],
    init_dist: &[f64],
    slack: f64,
) -> Result<StandardLp, EstimationError> {
    let missing = est.uncovered();
    if !missing.is_empty() {
        return Err(EstimationError::Uncovered(missing));
    }
    let mut lp = assemble_discounted(
        est.num_states,
        est.num_actions,
        gamma,
        &est.mean_reward,
        &est.mean_costs,
        &est.transitions_flat(),
        budgets,
        init_dist,
    );
    lp.slack = slack;
    Ok(lp)
}
