//! Occupancy-measure LPs in standard form and their restricted primal/dual
//! solves.
//!
//! The discounted program is `max r̂ᵀq` subject to `Cq ≤ α`, `Bq = μ`, `q ≥ 0`
//! with `B[s, (s',a')] = δ(s,s') − γ P(s|s',a')` and `μ = (1−γ)μ₁`. Its value
//! is `(1−γ)` times the optimal discounted reward, so cost budgets enter on
//! the same scale: `α = (1−γ)·budget`.

use crate::linalg::{dot, Matrix};
use crate::model::{CmdpInstance, EpisodicInstance};
use crate::simplex::{self, LinearProgram, Row, SimplexError, SimplexStatus};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

pub use crate::simplex::SimplexStatus as LpStatus;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("solver failure: {0}")]
    Solver(#[from] SimplexError),
    #[error("{what} index {index} out of range ({len})")]
    Index { what: &'static str, index: usize, len: usize },
    #[error("negative slack {0}")]
    NegativeSlack(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColLabel {
    Pair { state: usize, action: usize },
    Timed { state: usize, action: usize, period: usize },
}

impl ColLabel {
    pub fn state(&self) -> usize {
        match *self {
            ColLabel::Pair { state, .. } | ColLabel::Timed { state, .. } => state,
        }
    }

    pub fn action(&self) -> usize {
        match *self {
            ColLabel::Pair { action, .. } | ColLabel::Timed { action, .. } => action,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowLabel {
    State(usize),
    Timed { state: usize, period: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardLp {
    pub objective: Vec<f64>,
    pub cost_matrix: Matrix,
    pub flow_matrix: Matrix,
    pub budgets: Vec<f64>,
    pub flow_rhs: Vec<f64>,
    pub col_labels: Vec<ColLabel>,
    pub flow_labels: Vec<FlowLabel>,
    /// Relaxation the program was built for; zero for exact programs.
    pub slack: f64,
}

/// Selection of cost rows and flow rows.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RowSet {
    pub cost: Vec<usize>,
    pub flow: Vec<usize>,
}

impl RowSet {
    pub fn len(&self) -> usize {
        self.cost.len() + self.flow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Column set `I` and supporting rows `J = J₁ ∪ J₂` of one optimal basis.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BasisPair {
    pub cols: Vec<usize>,
    pub rows_cost: Vec<usize>,
    pub rows_flow: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BasisFile {
    cols: Vec<Vec<usize>>,
    rows_cost: Vec<usize>,
    rows_flow: Vec<usize>,
}

impl BasisPair {
    pub fn rows(&self) -> RowSet {
        RowSet { cost: self.rows_cost.clone(), flow: self.rows_flow.clone() }
    }

    pub fn num_rows(&self) -> usize {
        self.rows_cost.len() + self.rows_flow.len()
    }

    pub fn is_square(&self) -> bool {
        self.cols.len() == self.num_rows()
    }

    /// Audit JSON with columns written as `[s, a]` (or `[s, a, h]`).
    pub fn to_json(&self, lp: &StandardLp) -> String {
        let cols = self
            .cols
            .iter()
            .map(|&c| match lp.col_labels[c] {
                ColLabel::Pair { state, action } => vec![state, action],
                ColLabel::Timed { state, action, period } => vec![state, action, period],
            })
            .collect();
        let file = BasisFile { cols, rows_cost: self.rows_cost.clone(), rows_flow: self.rows_flow.clone() };
        serde_json::to_string_pretty(&file).expect("basis serializes")
    }

    pub fn from_json(text: &str, lp: &StandardLp) -> Result<Self, String> {
        let file: BasisFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut cols = Vec::with_capacity(file.cols.len());
        for label in &file.cols {
            let idx = lp
                .col_labels
                .iter()
                .position(|l| match *l {
                    ColLabel::Pair { state, action } => label[..] == [state, action],
                    ColLabel::Timed { state, action, period } => label[..] == [state, action, period],
                })
                .ok_or_else(|| format!("unknown column {label:?}"))?;
            cols.push(idx);
        }
        Ok(Self { cols, rows_cost: file.rows_cost, rows_flow: file.rows_flow })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub value: f64,
    /// Full-length primal point, zero on excluded columns.
    pub q: Vec<f64>,
    /// Multipliers on cost rows (zero on excluded rows).
    pub dual_y: Vec<f64>,
    /// Multipliers on flow rows (zero on excluded rows).
    pub dual_z: Vec<f64>,
    pub iterations: usize,
}

impl StandardLp {
    pub fn num_cols(&self) -> usize {
        self.objective.len()
    }

    pub fn num_cost_rows(&self) -> usize {
        self.budgets.len()
    }

    pub fn num_flow_rows(&self) -> usize {
        self.flow_rhs.len()
    }

    pub fn all_cols(&self) -> Vec<usize> {
        (0..self.num_cols()).collect()
    }

    pub fn all_rows(&self) -> RowSet {
        RowSet { cost: (0..self.num_cost_rows()).collect(), flow: (0..self.num_flow_rows()).collect() }
    }

    /// `[C(J₁, I); B(J₂, I)]`.
    pub fn submatrix(&self, rows: &RowSet, cols: &[usize]) -> Matrix {
        self.cost_matrix.select(&rows.cost, cols).vstack(&self.flow_matrix.select(&rows.flow, cols))
    }

    /// `(α_{J₁}; μ_{J₂})`.
    pub fn rhs(&self, rows: &RowSet) -> Vec<f64> {
        rows.cost.iter().map(|&k| self.budgets[k]).chain(rows.flow.iter().map(|&s| self.flow_rhs[s])).collect()
    }

    fn check(&self, cols: &[usize], rows: &RowSet, slack: f64) -> Result<(), LpError> {
        if !(slack >= 0.0) {
            return Err(LpError::NegativeSlack(slack));
        }
        let bad = |what, index: usize, len: usize| (index >= len).then_some(LpError::Index { what, index, len });
        for &c in cols {
            if let Some(e) = bad("column", c, self.num_cols()) {
                return Err(e);
            }
        }
        for &k in &rows.cost {
            if let Some(e) = bad("cost row", k, self.num_cost_rows()) {
                return Err(e);
            }
        }
        for &s in &rows.flow {
            if let Some(e) = bad("flow row", s, self.num_flow_rows()) {
                return Err(e);
            }
        }
        Ok(())
    }

    /// Fixed-format text dump: objective, then `C | α`, then `B | μ`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.9e}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "cols {} cost_rows {} flow_rows {} slack {:.9e}", self.num_cols(), self.num_cost_rows(), self.num_flow_rows(), self.slack);
        let _ = writeln!(out, "objective {}", fmt(&self.objective));
        for k in 0..self.num_cost_rows() {
            let _ = writeln!(out, "cost {k} {} | {:.9e}", fmt(self.cost_matrix.row(k)), self.budgets[k]);
        }
        for s in 0..self.num_flow_rows() {
            let _ = writeln!(out, "flow {s} {} | {:.9e}", fmt(self.flow_matrix.row(s)), self.flow_rhs[s]);
        }
        out
    }

    /// Primal objective and constraint violation of a full-length point.
    pub fn max_violation(&self, q: &[f64]) -> f64 {
        let mut worst = q.iter().fold(0.0f64, |acc, v| acc.max(-v));
        for k in 0..self.num_cost_rows() {
            worst = worst.max(dot(self.cost_matrix.row(k), q) - self.budgets[k]);
        }
        for s in 0..self.num_flow_rows() {
            worst = worst.max((dot(self.flow_matrix.row(s), q) - self.flow_rhs[s]).abs());
        }
        worst
    }

    /// Dual objective `Σ y(α+λ) + Σ z·(μ ± λ)` for multipliers on the given rows.
    pub fn dual_objective(&self, y: &[f64], z: &[f64], slack: f64) -> f64 {
        let cost: f64 = y.iter().zip(&self.budgets).map(|(yk, a)| yk * (a + slack)).sum();
        let flow: f64 = z.iter().zip(&self.flow_rhs).map(|(zs, m)| zs * m + zs.abs() * slack).sum();
        cost + flow
    }
}

/// Discounted program from raw tables. `transitions[col*S + s']`,
/// `budgets` already on the LP scale.
pub fn assemble_discounted(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    reward: &[f64],
    costs: &[Vec<f64>],
    transitions: &[f64],
    budgets: &[f64],
    init_dist: &[f64],
) -> StandardLp {
    let n = num_states * num_actions;
    let cost_matrix = Matrix::from_fn(costs.len(), n, |k, j| costs[k][j]);
    let mut flow_matrix = Matrix::zeros(num_states, n);
    for col in 0..n {
        let s_from = col / num_actions;
        flow_matrix[(s_from, col)] += 1.0;
        for t in 0..num_states {
            let p = transitions[col * num_states + t];
            if p != 0.0 {
                flow_matrix[(t, col)] -= gamma * p;
            }
        }
    }
    StandardLp {
        objective: reward.to_vec(),
        cost_matrix,
        flow_matrix,
        budgets: budgets.to_vec(),
        flow_rhs: init_dist.iter().map(|m| (1.0 - gamma) * m).collect(),
        col_labels: (0..n).map(|c| ColLabel::Pair { state: c / num_actions, action: c % num_actions }).collect(),
        flow_labels: (0..num_states).map(FlowLabel::State).collect(),
        slack: 0.0,
    }
}

/// Budgets of a discounted instance on the LP scale.
pub fn lp_budgets(inst: &CmdpInstance) -> Vec<f64> {
    inst.budgets.iter().map(|b| (1.0 - inst.gamma) * b).collect()
}

pub fn build_infinite_lp(inst: &CmdpInstance) -> StandardLp {
    assemble_discounted(
        inst.num_states,
        inst.num_actions,
        inst.gamma,
        &inst.mean_reward,
        &inst.mean_costs,
        &inst.kernel,
        &lp_budgets(inst),
        &inst.init_dist,
    )
}

/// Episodic program with period-major columns `h*S*A + s*A + a` and flow rows
/// `h*S + s`. Values are expected totals over the horizon.
pub fn build_finite_lp(inst: &EpisodicInstance) -> StandardLp {
    let (ns, na, hz) = (inst.num_states, inst.num_actions, inst.horizon);
    let block = ns * na;
    let n = block * hz;
    let mut objective = Vec::with_capacity(n);
    for h in 0..hz {
        objective.extend_from_slice(&inst.rewards[h]);
    }
    let cost_matrix = Matrix::from_fn(inst.budgets.len(), n, |k, j| inst.costs[k][j / block][j % block]);
    let mut flow_matrix = Matrix::zeros(ns * hz, n);
    for h in 0..hz {
        for s in 0..ns {
            for a in 0..na {
                let col = h * block + s * na + a;
                flow_matrix[(h * ns + s, col)] += 1.0;
                if h + 1 < hz {
                    for (t, p) in inst.transition(h, s, a).iter().enumerate() {
                        if *p != 0.0 {
                            flow_matrix[((h + 1) * ns + t, col)] -= p;
                        }
                    }
                }
            }
        }
    }
    let mut flow_rhs = vec![0.0; ns * hz];
    flow_rhs[..ns].copy_from_slice(&inst.init_dist);
    let col_labels = (0..n)
        .map(|j| {
            let r = j % block;
            ColLabel::Timed { state: r / na, action: r % na, period: j / block }
        })
        .collect();
    let flow_labels = (0..ns * hz).map(|r| FlowLabel::Timed { state: r % ns, period: r / ns }).collect();
    StandardLp {
        objective,
        cost_matrix,
        flow_matrix,
        budgets: inst.budgets.clone(),
        flow_rhs,
        col_labels,
        flow_labels,
        slack: 0.0,
    }
}

fn restricted_program(lp: &StandardLp, cols: &[usize], rows: &RowSet, slack: f64) -> LinearProgram {
    let objective = cols.iter().map(|&c| lp.objective[c]).collect();
    let mut out = Vec::with_capacity(rows.len());
    for &k in &rows.cost {
        out.push(Row {
            coeffs: cols.iter().map(|&c| lp.cost_matrix[(k, c)]).collect(),
            lower: f64::NEG_INFINITY,
            upper: lp.budgets[k] + slack,
        });
    }
    for &s in &rows.flow {
        out.push(Row {
            coeffs: cols.iter().map(|&c| lp.flow_matrix[(s, c)]).collect(),
            lower: lp.flow_rhs[s] - slack,
            upper: lp.flow_rhs[s] + slack,
        });
    }
    LinearProgram { objective, rows: out }
}

/// `max r̂ᵀq` over columns `cols` (all others fixed to zero) subject to the
/// selected rows, with cost rows relaxed to `α + slack` and flow rows to
/// `|Bq − μ| ≤ slack`.
pub fn solve_restricted_primal(lp: &StandardLp, cols: &[usize], rows: &RowSet, slack: f64) -> Result<LpSolution, LpError> {
    lp.check(cols, rows, slack)?;
    let program = restricted_program(lp, cols, rows, slack);
    let res = simplex::solve(&program)?;
    let mut q = vec![0.0; lp.num_cols()];
    if res.status == SimplexStatus::Optimal {
        for (i, &c) in cols.iter().enumerate() {
            q[c] = res.x[i];
        }
    }
    let mut dual_y = vec![0.0; lp.num_cost_rows()];
    let mut dual_z = vec![0.0; lp.num_flow_rows()];
    for (i, &k) in rows.cost.iter().enumerate() {
        dual_y[k] = res.duals[i];
    }
    for (i, &s) in rows.flow.iter().enumerate() {
        dual_z[s] = res.duals[rows.cost.len() + i];
    }
    let value = match res.status {
        SimplexStatus::Optimal => res.objective,
        SimplexStatus::Infeasible => f64::NEG_INFINITY,
        SimplexStatus::Unbounded => f64::INFINITY,
    };
    Ok(LpSolution { status: res.status, value, q, dual_y, dual_z, iterations: res.iterations })
}

pub fn solve_lp(lp: &StandardLp) -> Result<LpSolution, LpError> {
    solve_restricted_primal(lp, &lp.all_cols(), &lp.all_rows(), 0.0)
}

/// `min αᵀy + μᵀz` over `y ≥ 0` supported on `rows.cost`, `z` supported on
/// `rows.flow`, subject to `C(:,I)ᵀy + B(:,I)ᵀz ≥ r̂_I`. Solved through its
/// primal. Status refers to the dual program: `Infeasible` (value `+∞`) when
/// the primal is unbounded, `Unbounded` (value `−∞`) when the primal is
/// infeasible.
pub fn solve_restricted_dual(lp: &StandardLp, cols: &[usize], rows: &RowSet, slack: f64) -> Result<LpSolution, LpError> {
    let mut sol = solve_restricted_primal(lp, cols, rows, slack)?;
    sol.status = match sol.status {
        SimplexStatus::Optimal => SimplexStatus::Optimal,
        SimplexStatus::Unbounded => SimplexStatus::Infeasible,
        SimplexStatus::Infeasible => SimplexStatus::Unbounded,
    };
    if sol.status == SimplexStatus::Optimal {
        sol.value = lp.dual_objective(&sol.dual_y, &sol.dual_z, slack);
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_state(gamma: f64, rewards: Vec<f64>) -> CmdpInstance {
        let na = rewards.len();
        CmdpInstance {
            num_states: 1,
            num_actions: na,
            gamma,
            kernel: vec![1.0; na],
            mean_reward: rewards,
            mean_costs: vec![],
            budgets: vec![],
            init_dist: vec![1.0],
            noise: 0.0,
            scale: 1.0,
        }
    }

    #[test]
    fn self_loop_flow_row() {
        let lp = build_infinite_lp(&one_state(0.7, vec![0.4]));
        assert!((lp.flow_matrix[(0, 0)] - 0.3).abs() < 1e-15);
        assert!((lp.flow_rhs[0] - 0.3).abs() < 1e-15);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.q[0] - 1.0).abs() < 1e-12);
        assert!((sol.value - 0.4).abs() < 1e-12);
    }

    #[test]
    fn swap_kernel_entries() {
        let g = 0.6;
        let inst = CmdpInstance {
            num_states: 2,
            num_actions: 1,
            gamma: g,
            kernel: vec![0.0, 1.0, 1.0, 0.0],
            mean_reward: vec![1.0, 0.0],
            mean_costs: vec![],
            budgets: vec![],
            init_dist: vec![0.5, 0.5],
            noise: 0.0,
            scale: 1.0,
        };
        let lp = build_infinite_lp(&inst);
        assert_eq!(lp.flow_matrix.to_rows(), vec![vec![1.0, -g], vec![-g, 1.0]]);
    }

    #[test]
    fn single_period_reduces_to_initial_mass() {
        let inst = crate::model::random_episodic_instance(3, 2, 1, 0, 4).unwrap();
        let lp = build_finite_lp(&inst);
        assert_eq!(lp.num_flow_rows(), 3);
        assert_eq!(lp.flow_rhs, inst.init_dist);
        for s in 0..3 {
            assert_eq!(lp.flow_matrix.row(s), &[0, 1, 2, 3, 4, 5].map(|c| if c / 2 == s { 1.0 } else { 0.0 })[..]);
        }
    }

    #[test]
    fn two_period_single_state_block() {
        let inst = crate::model::random_episodic_instance(1, 2, 2, 0, 4).unwrap();
        let lp = build_finite_lp(&inst);
        assert_eq!(lp.flow_matrix.to_rows(), vec![vec![1.0, 1.0, 0.0, 0.0], vec![-1.0, -1.0, 1.0, 1.0]]);
    }

    #[test]
    fn dual_of_full_program_matches_primal() {
        let inst = crate::model::random_instance(&crate::model::RandomConfig::new(3, 3, 0.7, 2, 8)).unwrap();
        let lp = build_infinite_lp(&inst);
        let p = solve_lp(&lp).unwrap();
        let d = solve_restricted_dual(&lp, &lp.all_cols(), &lp.all_rows(), 0.0).unwrap();
        assert!((p.value - d.value).abs() < 1e-9 * (1.0 + p.value.abs()));
    }

    #[test]
    fn basis_json_round_trip() {
        let lp = build_infinite_lp(&one_state(0.5, vec![0.1, 0.9]));
        let b = BasisPair { cols: vec![1], rows_cost: vec![], rows_flow: vec![0] };
        let text = b.to_json(&lp);
        assert!(text.contains("[\n      0,\n      1\n    ]") || text.contains("[0,1]"));
        assert_eq!(BasisPair::from_json(&text, &lp).unwrap(), b);
    }
}
