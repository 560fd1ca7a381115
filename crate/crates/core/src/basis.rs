//! Optimal-basis identification by variable and constraint deletion, on the
//! true program and from samples, plus verification and hardness constants.

use crate::estimation::{
    build_empirical_lp, gaps_from_radius, radius_multiplier, ConfidenceParams, EmpiricalEstimates, EstimationError,
};
use crate::linalg::{sigma_min_columns, solve_square_system};
use crate::lp::{solve_restricted_dual, solve_restricted_primal, BasisPair, LpError, LpStatus, RowSet, StandardLp};
use crate::model::{draw, CmdpInstance, RngHandle};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("reference program is {0:?}")]
    NotSolvable(LpStatus),
    #[error("row deletion stopped with {rows} rows for {cols} columns")]
    NotSquare { cols: usize, rows: usize },
}

/// Tolerances for the exact identification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactTolerances {
    /// Relative tolerance on value equality, scaled by `1 + |V|`.
    pub value_rel: f64,
    /// Smallest singular value counted as full rank.
    pub rank: f64,
}

impl Default for ExactTolerances {
    fn default() -> Self {
        Self { value_rel: 1e-7, rank: 1e-9 }
    }
}

/// Decision rules used by one deletion pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeletionRule {
    /// Values equal within `value_rel·(1+|V|)`, full rank when `σ > rank`.
    Exact(ExactTolerances),
    /// Values equal within `value_threshold`; a candidate row set is accepted
    /// when `σ ≥ |J'|·|I|·rank_unit`.
    Threshold { value_threshold: f64, rank_unit: f64 },
}

impl DeletionRule {
    fn same_value(&self, reference: f64, candidate: f64) -> bool {
        if !candidate.is_finite() {
            return false;
        }
        match *self {
            DeletionRule::Exact(t) => (reference - candidate).abs() <= t.value_rel * (1.0 + reference.abs()),
            DeletionRule::Threshold { value_threshold, .. } => (reference - candidate).abs() <= value_threshold,
        }
    }

    fn full_rank(&self, sigma: f64, rows: usize, cols: usize) -> bool {
        match *self {
            DeletionRule::Exact(t) => sigma > t.rank,
            DeletionRule::Threshold { rank_unit, .. } => sigma >= (rows * cols) as f64 * rank_unit && sigma > 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Column,
    CostRow,
    FlowRow,
}

/// One tested deletion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub stage: Stage,
    pub index: usize,
    /// `V_{I'}` for columns, `Dual_{J',I}` for rows.
    pub value: f64,
    pub sigma: Option<f64>,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub basis: BasisPair,
    /// Reference value of the program the pass ran on.
    pub value: f64,
    pub trace: Vec<TraceStep>,
}

/// Runs the column pass then the row pass on `lp` with every program relaxed
/// by `slack`.
pub fn identify_with_rule(lp: &StandardLp, slack: f64, rule: DeletionRule) -> Result<Identification, BasisError> {
    let all_rows = lp.all_rows();
    let full = solve_restricted_primal(lp, &lp.all_cols(), &all_rows, slack)?;
    if full.status != LpStatus::Optimal {
        return Err(BasisError::NotSolvable(full.status));
    }
    let v = full.value;
    let mut trace = Vec::new();

    let mut cols = lp.all_cols();
    for i in lp.all_cols() {
        let trial: Vec<usize> = cols.iter().copied().filter(|&c| c != i).collect();
        let sol = solve_restricted_primal(lp, &trial, &all_rows, slack)?;
        let dropped = rule.same_value(v, sol.value);
        trace.push(TraceStep { stage: Stage::Column, index: i, value: sol.value, sigma: None, dropped });
        if dropped {
            cols = trial;
        }
    }

    let mut rows = all_rows.clone();
    let candidates = all_rows.cost.iter().map(|&k| (Stage::CostRow, k)).chain(all_rows.flow.iter().map(|&s| (Stage::FlowRow, s)));
    for (stage, j) in candidates {
        if rows.len() == cols.len() {
            break;
        }
        let mut trial = rows.clone();
        match stage {
            Stage::CostRow => trial.cost.retain(|&k| k != j),
            _ => trial.flow.retain(|&s| s != j),
        }
        let dual = solve_restricted_dual(lp, &cols, &trial, slack)?;
        let sigma = sigma_min_columns(&lp.submatrix(&trial, &cols));
        let dropped = rule.same_value(v, dual.value) && rule.full_rank(sigma, trial.len(), cols.len());
        trace.push(TraceStep { stage, index: j, value: dual.value, sigma: Some(sigma), dropped });
        if dropped {
            rows = trial;
        }
    }
    if rows.len() != cols.len() {
        return Err(BasisError::NotSquare { cols: cols.len(), rows: rows.len() });
    }
    Ok(Identification { basis: BasisPair { cols, rows_cost: rows.cost, rows_flow: rows.flow }, value: v, trace })
}

/// Deletion on the true program with exact-arithmetic tests replaced by tight
/// tolerances.
pub fn identify_basis_true(lp: &StandardLp) -> Result<Identification, BasisError> {
    identify_with_rule(lp, 0.0, DeletionRule::Exact(ExactTolerances::default()))
}

/// Thresholds of the sample-based pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalRule {
    /// Scaled confidence radius, also the program slack.
    pub radius: f64,
    pub gap1: f64,
    pub gap2: f64,
}

impl EmpiricalRule {
    pub fn new(
        params: ConfidenceParams,
        scale: f64,
        num_states: usize,
        gamma: f64,
        lp_budgets: &[f64],
    ) -> Result<Self, BasisError> {
        let radius = params.rad() * radius_multiplier(scale);
        let min_budget = lp_budgets.iter().copied().fold(f64::INFINITY, f64::min);
        let g = gaps_from_radius(radius, num_states, gamma, lp_budgets.len(), min_budget)?;
        Ok(Self { radius, gap1: g.gap1, gap2: g.gap2 })
    }

    pub fn deletion_rule(&self) -> DeletionRule {
        DeletionRule::Threshold { value_threshold: 2.0 * self.gap1 + 2.0 * self.gap2, rank_unit: self.radius }
    }
}

/// Deletion on the empirical program built from `est`, with all programs
/// relaxed by the scaled radius. `lp_budgets` are on the LP scale.
pub fn identify_basis_empirical(
    est: &EmpiricalEstimates,
    params: ConfidenceParams,
    scale: f64,
    gamma: f64,
    lp_budgets: &[f64],
    init_dist: &[f64],
) -> Result<Identification, BasisError> {
    let rule = EmpiricalRule::new(params, scale, est.num_states, gamma, lp_budgets)?;
    let lp = build_empirical_lp(est, gamma, lp_budgets, init_dist, rule.radius)?;
    identify_with_rule(&lp, rule.radius, rule.deletion_rule())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BasisFailure {
    NotSquare { cols: usize, rows: usize },
    Singular { sigma_min: f64 },
    NonPositive { col: usize, value: f64 },
    Infeasible { violation: f64 },
    ValueMismatch { value: f64, optimum: f64 },
    ReferenceNotSolvable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisReport {
    pub passed: bool,
    pub failure: Option<BasisFailure>,
    /// Completed primal point (basic solution on `I`, zero elsewhere).
    pub q: Vec<f64>,
    pub value: f64,
    pub sigma_min: f64,
}

/// Solves the square system of `basis` and checks positivity, feasibility and
/// optimality of the completed point.
pub fn verify_basis(lp: &StandardLp, basis: &BasisPair) -> Result<BasisReport, BasisError> {
    let fail = |failure, q, value, sigma_min| BasisReport { passed: false, failure: Some(failure), q, value, sigma_min };
    let n = lp.num_cols();
    if !basis.is_square() {
        return Ok(fail(
            BasisFailure::NotSquare { cols: basis.cols.len(), rows: basis.num_rows() },
            vec![0.0; n],
            f64::NAN,
            0.0,
        ));
    }
    let rows = basis.rows();
    let a = lp.submatrix(&rows, &basis.cols);
    let sigma_min = sigma_min_columns(&a);
    let x = match solve_square_system(&a, &lp.rhs(&rows)) {
        Ok(x) => x,
        Err(_) => return Ok(fail(BasisFailure::Singular { sigma_min }, vec![0.0; n], f64::NAN, sigma_min)),
    };
    let mut q = vec![0.0; n];
    for (&c, &v) in basis.cols.iter().zip(&x) {
        q[c] = v;
    }
    let value: f64 = crate::linalg::dot(&lp.objective, &q);
    if let Some((i, &v)) = x.iter().enumerate().find(|(_, v)| **v <= 1e-9) {
        return Ok(fail(BasisFailure::NonPositive { col: basis.cols[i], value: v }, q, value, sigma_min));
    }
    let violation = lp.max_violation(&q);
    if violation > 1e-9 {
        return Ok(fail(BasisFailure::Infeasible { violation }, q, value, sigma_min));
    }
    let opt = crate::lp::solve_lp(lp)?;
    if opt.status != LpStatus::Optimal {
        return Ok(fail(BasisFailure::ReferenceNotSolvable, q, value, sigma_min));
    }
    if (value - opt.value).abs() > 1e-7 * (1.0 + opt.value.abs()) {
        return Ok(fail(BasisFailure::ValueMismatch { value, optimum: opt.value }, q, value, sigma_min));
    }
    Ok(BasisReport { passed: true, failure: None, q, value, sigma_min })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardnessConstants {
    /// Smallest positive value drop from deleting a column.
    pub delta1: f64,
    /// Smallest positive rise of a row-restricted dual over the reference.
    pub delta2: f64,
    /// Smallest full-rank singular value among candidate row systems.
    pub sigma0: f64,
    /// Smallest singular value of the identified basis matrix.
    pub sigma_star: f64,
    pub basis: BasisPair,
    pub lp_solves: usize,
    /// False when the solve budget cut the enumeration short.
    pub exhaustive: bool,
}

/// Follows the exact deletion path and, at every step, evaluates every
/// remaining candidate so the constants cover all decisions the sample-based
/// pass could face. Stops early once `limit` programs have been solved.
pub fn hardness_constants(lp: &StandardLp, limit: usize) -> Result<HardnessConstants, BasisError> {
    let tol = ExactTolerances::default();
    let rule = DeletionRule::Exact(tol);
    let id = identify_basis_true(lp)?;
    let v = id.value;
    let eq_tol = tol.value_rel * (1.0 + v.abs());
    let all_rows = lp.all_rows();
    let mut solves = 0usize;
    let mut exhaustive = true;
    let (mut delta1, mut delta2, mut sigma0) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);

    // Replay the column pass.
    let mut cols = lp.all_cols();
    'cols: for step in id.trace.iter().filter(|t| t.stage == Stage::Column) {
        for &i in &cols {
            if solves >= limit {
                exhaustive = false;
                break 'cols;
            }
            let trial: Vec<usize> = cols.iter().copied().filter(|&c| c != i).collect();
            let val = solve_restricted_primal(lp, &trial, &all_rows, 0.0)?.value;
            solves += 1;
            let drop = v - val;
            if drop > eq_tol {
                delta1 = delta1.min(drop);
            }
        }
        if step.dropped {
            cols.retain(|&c| c != step.index);
        }
    }

    // Replay the row pass.
    let mut rows = all_rows.clone();
    let consider = |trial: &RowSet, sigma0: &mut f64| {
        let sigma = sigma_min_columns(&lp.submatrix(trial, &id.basis.cols));
        if rule.full_rank(sigma, trial.len(), id.basis.cols.len()) {
            *sigma0 = sigma0.min(sigma);
        }
    };
    'rows: for step in id.trace.iter().filter(|t| t.stage != Stage::Column) {
        let candidates: Vec<(Stage, usize)> =
            rows.cost.iter().map(|&k| (Stage::CostRow, k)).chain(rows.flow.iter().map(|&s| (Stage::FlowRow, s))).collect();
        for (stage, j) in candidates {
            if solves >= limit {
                exhaustive = false;
                break 'rows;
            }
            let mut trial = rows.clone();
            match stage {
                Stage::CostRow => trial.cost.retain(|&k| k != j),
                _ => trial.flow.retain(|&s| s != j),
            }
            let val = solve_restricted_dual(lp, &id.basis.cols, &trial, 0.0)?.value;
            solves += 1;
            let rise = val - v;
            if rise > eq_tol && rise.is_finite() {
                delta2 = delta2.min(rise);
            }
            consider(&trial, &mut sigma0);
        }
        if step.dropped {
            match step.stage {
                Stage::CostRow => rows.cost.retain(|&k| k != step.index),
                _ => rows.flow.retain(|&s| s != step.index),
            }
        }
    }
    consider(&id.basis.rows(), &mut sigma0);
    let sigma_star = sigma_min_columns(&lp.submatrix(&id.basis.rows(), &id.basis.cols));
    Ok(HardnessConstants {
        delta1,
        delta2,
        sigma0,
        sigma_star,
        basis: id.basis,
        lp_solves: solves,
        exhaustive,
    })
}

/// Sample-size doubling around the sample-based identification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoublingConfig {
    pub n0_start: u64,
    /// Cap on total generative-model queries.
    pub sample_budget: u64,
    pub epsilon: f64,
    /// Stop as soon as two consecutive identifications agree on a nonempty basis.
    pub stop_on_agreement: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoublingRound {
    pub n0: u64,
    pub basis: Option<BasisPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoublingOutcome {
    /// Last successful identification.
    pub basis: Option<BasisPair>,
    pub rounds: Vec<DoublingRound>,
    pub samples_used: u64,
    pub estimates: EmpiricalEstimates,
}

/// Tops every pair up to `n0` samples, identifies, doubles `n0`, and repeats
/// until the budget would be exceeded (or two consecutive rounds agree when
/// `stop_on_agreement` is set).
pub fn identify_with_doubling(
    inst: &CmdpInstance,
    cfg: &DoublingConfig,
    rng: &mut RngHandle,
) -> Result<DoublingOutcome, BasisError> {
    let np = inst.num_pairs() as u64;
    let budgets = crate::lp::lp_budgets(inst);
    let mut est = EmpiricalEstimates::new(inst.num_states, inst.num_actions, inst.num_constraints());
    let mut rounds: Vec<DoublingRound> = Vec::new();
    let mut n0 = cfg.n0_start.max(1);
    while n0 * np <= cfg.sample_budget {
        for s in 0..inst.num_states {
            for a in 0..inst.num_actions {
                let col = inst.pair(s, a);
                while est.counts[col] < n0 {
                    let sample = draw(inst, s, a, rng);
                    est.update(s, a, &sample);
                }
            }
        }
        let params = ConfidenceParams::new(n0, cfg.epsilon)?;
        let basis = match identify_basis_empirical(&est, params, inst.scale, inst.gamma, &budgets, &inst.init_dist) {
            Ok(id) => Some(id.basis),
            Err(BasisError::NotSquare { .. }) | Err(BasisError::NotSolvable(_)) => None,
            Err(e) => return Err(e),
        };
        let agreed = basis.as_ref().is_some_and(|b| !b.cols.is_empty()) && rounds.last().is_some_and(|r| r.basis == basis);
        rounds.push(DoublingRound { n0, basis });
        if cfg.stop_on_agreement && agreed {
            break;
        }
        n0 *= 2;
    }
    let basis = rounds.iter().rev().find_map(|r| r.basis.clone());
    let samples_used = est.total_samples();
    Ok(DoublingOutcome { basis, rounds, samples_used, estimates: est })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::build_infinite_lp;

    fn bandit(rewards: Vec<f64>) -> CmdpInstance {
        let na = rewards.len();
        CmdpInstance {
            num_states: 1,
            num_actions: na,
            gamma: 0.5,
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
    fn better_action_is_the_basis() {
        let lp = build_infinite_lp(&bandit(vec![0.2, 0.7]));
        let id = identify_basis_true(&lp).unwrap();
        assert_eq!(id.basis, BasisPair { cols: vec![1], rows_cost: vec![], rows_flow: vec![0] });
        assert!(verify_basis(&lp, &id.basis).unwrap().passed);
    }

    #[test]
    fn gap_is_delta1() {
        let lp = build_infinite_lp(&bandit(vec![0.2, 0.7]));
        let h = hardness_constants(&lp, 1000).unwrap();
        assert!((h.delta1 - 0.5).abs() < 1e-9);
        assert!(h.exhaustive);
        assert!(h.sigma_star >= 0.5 - 1e-12);
    }

    #[test]
    fn tied_actions_are_deterministic() {
        let lp = build_infinite_lp(&bandit(vec![0.5, 0.5, 0.1]));
        let a = identify_basis_true(&lp).unwrap();
        let b = identify_basis_true(&lp).unwrap();
        assert_eq!(a, b);
        assert!(verify_basis(&lp, &a.basis).unwrap().passed);
    }

    #[test]
    fn zero_occupancy_column_fails_positivity() {
        let lp = build_infinite_lp(&bandit(vec![0.2, 0.7]));
        let bad = BasisPair { cols: vec![0], rows_cost: vec![], rows_flow: vec![0] };
        let r = verify_basis(&lp, &bad).unwrap();
        assert!(matches!(r.failure, Some(BasisFailure::ValueMismatch { .. })));
    }
}
