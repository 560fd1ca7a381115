//! Dense bounded-variable revised simplex.
//!
//! Solves `max cᵀx` subject to `lo_i ≤ a_iᵀx ≤ hi_i` and `x ≥ 0`. Each row gets
//! a bounded logical variable, infeasible starting rows get an artificial, and
//! a two-phase primal simplex runs on an explicit basis inverse that is
//! refactored periodically. Pricing is Dantzig with a Harris ratio test; after
//! a run of degenerate pivots the solver switches to Bland's rule for the
//! remainder of the phase.

use crate::linalg::{dot, Lu, Matrix};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error("simplex did not converge within {0} iterations")]
    IterationLimit(usize),
    #[error("basis matrix became singular during refactorization")]
    SingularBasis,
    #[error("row {row} has lower bound {lower} above upper bound {upper}")]
    InvertedBounds { row: usize, lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SimplexStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// One constraint row `lower ≤ coeffsᵀx ≤ upper`. Infinite bounds are allowed.
#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    /// Maximized.
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    /// Consecutive degenerate pivots tolerated before switching to Bland.
    pub bland_after: usize,
    pub refactor_every: usize,
    /// Start in Bland mode.
    pub bland: bool,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            optimality_tol: 1e-9,
            pivot_tol: 1e-9,
            bland_after: 50,
            refactor_every: 50,
            bland: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub status: SimplexStatus,
    pub objective: f64,
    pub x: Vec<f64>,
    /// Row multipliers `∂objective/∂rhs`, sign convention of the original rows.
    pub duals: Vec<f64>,
    pub iterations: usize,
    pub used_bland: bool,
}

struct Tableau<'a> {
    m: usize,
    n_struct: usize,
    /// Structural columns after row sign normalization, column-major.
    acols: Vec<Vec<f64>>,
    /// Sign of the artificial in each row (0 when the row has none).
    art_sign: Vec<f64>,
    rhs: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    x: Vec<f64>,
    at_upper: Vec<bool>,
    basis: Vec<usize>,
    in_basis: Vec<Option<usize>>,
    binv: Matrix,
    cost: Vec<f64>,
    opts: &'a SimplexOptions,
    iterations: usize,
    max_iterations: usize,
    used_bland: bool,
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
}

impl Tableau<'_> {
    fn nvars(&self) -> usize {
        self.n_struct + 2 * self.m
    }

    fn column(&self, j: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.m];
        self.add_column(j, 1.0, &mut c);
        c
    }

    fn add_column(&self, j: usize, scale: f64, out: &mut [f64]) {
        if j < self.n_struct {
            for (o, a) in out.iter_mut().zip(&self.acols[j]) {
                *o += scale * a;
            }
        } else if j < self.n_struct + self.m {
            out[j - self.n_struct] += scale;
        } else {
            let i = j - self.n_struct - self.m;
            out[i] += scale * self.art_sign[i];
        }
    }

    fn col_dot(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n_struct {
            dot(&self.acols[j], y)
        } else if j < self.n_struct + self.m {
            y[j - self.n_struct]
        } else {
            let i = j - self.n_struct - self.m;
            self.art_sign[i] * y[i]
        }
    }

    fn refactor(&mut self) -> Result<(), SimplexError> {
        let m = self.m;
        if m == 0 {
            return Ok(());
        }
        let mut b = Matrix::zeros(m, m);
        for (k, &j) in self.basis.iter().enumerate() {
            let c = self.column(j);
            for i in 0..m {
                b[(i, k)] = c[i];
            }
        }
        let lu = Lu::factor(&b).map_err(|_| SimplexError::SingularBasis)?;
        self.binv = lu.inverse();
        // x_B = B⁻¹ (rhs − N x_N)
        let mut r = self.rhs.clone();
        for j in 0..self.nvars() {
            if self.in_basis[j].is_none() && self.x[j] != 0.0 {
                self.add_column(j, -self.x[j], &mut r);
            }
        }
        let xb = self.binv.mul_vec(&r);
        for (k, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[k];
        }
        Ok(())
    }

    fn duals(&self) -> Vec<f64> {
        let cb: Vec<f64> = self.basis.iter().map(|&j| self.cost[j]).collect();
        self.binv.tr_mul_vec(&cb)
    }

    fn run_phase(&mut self) -> Result<PhaseOutcome, SimplexError> {
        let mut bland = self.opts.bland;
        let mut degenerate_run = 0usize;
        let mut since_refactor = 0usize;
        let tol = self.opts.feasibility_tol;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(SimplexError::IterationLimit(self.iterations));
            }
            if since_refactor >= self.opts.refactor_every {
                self.refactor()?;
                since_refactor = 0;
            }
            let y = self.duals();

            // Pricing.
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.nvars() {
                if self.in_basis[j].is_some() || self.ub[j] - self.lb[j] <= 0.0 {
                    continue;
                }
                let d = self.cost[j] - self.col_dot(j, &y);
                let eligible = if self.at_upper[j] { d < -self.opts.optimality_tol } else { d > self.opts.optimality_tol };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.map_or(true, |(_, best)| d.abs() > best.abs()) {
                    entering = Some((j, d));
                }
            }
            let Some((j, d)) = entering else {
                return Ok(PhaseOutcome::Optimal);
            };
            self.iterations += 1;
            let dir = if d > 0.0 { 1.0 } else { -1.0 };
            let aj = self.column(j);
            let alpha = self.binv.mul_vec(&aj);

            // Harris pass 1: largest step with bounds relaxed by tol.
            let mut t_relaxed = f64::INFINITY;
            for (i, &bi) in self.basis.iter().enumerate() {
                let rate = -dir * alpha[i];
                if rate.abs() <= self.opts.pivot_tol {
                    continue;
                }
                let t = if rate < 0.0 {
                    if self.lb[bi].is_finite() {
                        (self.x[bi] - self.lb[bi] + tol) / -rate
                    } else {
                        f64::INFINITY
                    }
                } else if self.ub[bi].is_finite() {
                    (self.ub[bi] - self.x[bi] + tol) / rate
                } else {
                    f64::INFINITY
                };
                t_relaxed = t_relaxed.min(t);
            }
            let flip_len = self.ub[j] - self.lb[j];
            if !t_relaxed.is_finite() && !flip_len.is_finite() {
                return Ok(PhaseOutcome::Unbounded);
            }

            // Pass 2: among rows blocking within the relaxed step pick the
            // largest pivot (or the smallest variable index under Bland).
            let mut leave: Option<(usize, f64, bool)> = None; // (row, step, hits_upper)
            let mut best_key = f64::NEG_INFINITY;
            for (i, &bi) in self.basis.iter().enumerate() {
                let rate = -dir * alpha[i];
                if rate.abs() <= self.opts.pivot_tol {
                    continue;
                }
                let (bound, hits_upper) = if rate < 0.0 { (self.lb[bi], false) } else { (self.ub[bi], true) };
                if !bound.is_finite() {
                    continue;
                }
                let t = ((bound - self.x[bi]) / rate).max(0.0);
                if t > t_relaxed {
                    continue;
                }
                let key = if bland { -(bi as f64) } else { rate.abs() };
                if key > best_key {
                    best_key = key;
                    leave = Some((i, t, hits_upper));
                }
            }

            if flip_len <= t_relaxed || leave.is_none() {
                // Bound flip: the entering variable crosses to its other bound.
                let t = flip_len;
                self.x[j] += dir * t;
                for (i, &bi) in self.basis.iter().enumerate() {
                    self.x[bi] -= dir * t * alpha[i];
                }
                self.at_upper[j] = !self.at_upper[j];
                self.x[j] = if self.at_upper[j] { self.ub[j] } else { self.lb[j] };
                degenerate_run = 0;
                continue;
            }

            let (r, t, hits_upper) = leave.expect("checked above");
            self.x[j] += dir * t;
            for (i, &bi) in self.basis.iter().enumerate() {
                self.x[bi] -= dir * t * alpha[i];
            }
            let leaving = self.basis[r];
            self.x[leaving] = if hits_upper { self.ub[leaving] } else { self.lb[leaving] };
            self.at_upper[leaving] = hits_upper;
            self.in_basis[leaving] = None;
            self.basis[r] = j;
            self.in_basis[j] = Some(r);
            self.at_upper[j] = false;

            // Product-form update of B⁻¹.
            let m = self.m;
            let piv = alpha[r];
            for c in 0..m {
                self.binv[(r, c)] /= piv;
            }
            for i in 0..m {
                if i == r || alpha[i] == 0.0 {
                    continue;
                }
                let f = alpha[i];
                for c in 0..m {
                    let v = self.binv[(r, c)];
                    self.binv[(i, c)] -= f * v;
                }
            }
            since_refactor += 1;

            if t <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > self.opts.bland_after && !bland {
                    bland = true;
                    self.used_bland = true;
                }
            } else {
                degenerate_run = 0;
            }
        }
    }
}

/// Solves the program with default options.
pub fn solve(lp: &LinearProgram) -> Result<SimplexResult, SimplexError> {
    solve_with(lp, &SimplexOptions::default())
}

pub fn solve_with(lp: &LinearProgram, opts: &SimplexOptions) -> Result<SimplexResult, SimplexError> {
    let n = lp.objective.len();
    // Normalize rows to `a·x + s = rhs`, `0 ≤ s ≤ range`.
    let mut kept: Vec<(usize, f64)> = Vec::new(); // (original row, sign)
    let mut rhs = Vec::new();
    let mut ranges = Vec::new();
    for (idx, row) in lp.rows.iter().enumerate() {
        assert_eq!(row.coeffs.len(), n, "row {idx} has wrong length");
        if row.lower > row.upper {
            return Err(SimplexError::InvertedBounds { row: idx, lower: row.lower, upper: row.upper });
        }
        if row.upper.is_finite() {
            kept.push((idx, 1.0));
            rhs.push(row.upper);
            ranges.push(row.upper - row.lower);
        } else if row.lower.is_finite() {
            kept.push((idx, -1.0));
            rhs.push(-row.lower);
            ranges.push(f64::INFINITY);
        }
    }
    let m = kept.len();
    let mut acols = vec![vec![0.0; m]; n];
    for (i, &(idx, sign)) in kept.iter().enumerate() {
        for (j, a) in lp.rows[idx].coeffs.iter().enumerate() {
            acols[j][i] = sign * a;
        }
    }

    let nv = n + 2 * m;
    let lb = vec![0.0; nv];
    let mut ub = vec![f64::INFINITY; nv];
    let mut x = vec![0.0; nv];
    let mut at_upper = vec![false; nv];
    let mut art_sign = vec![0.0; m];
    let mut basis = Vec::with_capacity(m);
    let mut in_basis = vec![None; nv];
    for i in 0..m {
        let s = n + i;
        let a = n + m + i;
        ub[s] = ranges[i];
        if rhs[i] >= 0.0 && rhs[i] <= ranges[i] {
            x[s] = rhs[i];
            basis.push(s);
            in_basis[s] = Some(i);
            ub[a] = 0.0;
        } else {
            let bound = if rhs[i] < 0.0 { 0.0 } else { ranges[i] };
            x[s] = bound;
            at_upper[s] = bound > 0.0;
            let resid = rhs[i] - bound;
            art_sign[i] = resid.signum();
            x[a] = resid.abs();
            basis.push(a);
            in_basis[a] = Some(i);
        }
    }

    let mut tab = Tableau {
        m,
        n_struct: n,
        acols,
        art_sign,
        rhs,
        lb,
        ub,
        x,
        at_upper,
        basis,
        in_basis,
        binv: Matrix::identity(m),
        cost: vec![0.0; nv],
        opts,
        iterations: 0,
        max_iterations: 200 * (m + n) + 1000,
        used_bland: false,
    };
    tab.refactor()?;

    let needs_phase1 = tab.art_sign.iter().any(|s| *s != 0.0);
    if needs_phase1 {
        for i in 0..m {
            if tab.art_sign[i] != 0.0 {
                tab.cost[n + m + i] = -1.0;
            }
        }
        tab.run_phase()?;
        tab.refactor()?;
        let infeasibility: f64 = (0..m).map(|i| tab.x[n + m + i].abs()).sum();
        let scale = 1.0 + tab.rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if infeasibility > opts.feasibility_tol * scale {
            return Ok(SimplexResult {
                status: SimplexStatus::Infeasible,
                objective: f64::NEG_INFINITY,
                x: tab.x[..n].to_vec(),
                duals: vec![0.0; lp.rows.len()],
                iterations: tab.iterations,
                used_bland: tab.used_bland,
            });
        }
        for i in 0..m {
            let a = n + m + i;
            tab.ub[a] = 0.0;
            tab.cost[a] = 0.0;
            if tab.in_basis[a].is_none() {
                tab.x[a] = 0.0;
                tab.at_upper[a] = false;
            }
        }
    }
    for (j, c) in lp.objective.iter().enumerate() {
        tab.cost[j] = *c;
    }
    let outcome = tab.run_phase()?;
    tab.refactor()?;

    let mut xs: Vec<f64> = tab.x[..n].to_vec();
    for v in xs.iter_mut() {
        if *v < 0.0 && *v > -opts.feasibility_tol {
            *v = 0.0;
        }
    }
    let status = match outcome {
        PhaseOutcome::Optimal => SimplexStatus::Optimal,
        PhaseOutcome::Unbounded => SimplexStatus::Unbounded,
    };
    let objective = match status {
        SimplexStatus::Unbounded => f64::INFINITY,
        _ => dot(&lp.objective, &xs),
    };
    let y = tab.duals();
    let mut duals = vec![0.0; lp.rows.len()];
    for (i, &(idx, sign)) in kept.iter().enumerate() {
        duals[idx] = sign * y[i];
    }
    Ok(SimplexResult { status, objective, x: xs, duals, iterations: tab.iterations, used_bland: tab.used_bland })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(coeffs: &[f64], lower: f64, upper: f64) -> Row {
        Row { coeffs: coeffs.to_vec(), lower, upper }
    }

    #[test]
    fn textbook_max() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36
        let lp = LinearProgram {
            objective: vec![3.0, 5.0],
            rows: vec![
                row(&[1.0, 0.0], f64::NEG_INFINITY, 4.0),
                row(&[0.0, 2.0], f64::NEG_INFINITY, 12.0),
                row(&[3.0, 2.0], f64::NEG_INFINITY, 18.0),
            ],
        };
        let r = solve(&lp).unwrap();
        assert_eq!(r.status, SimplexStatus::Optimal);
        assert!((r.objective - 36.0).abs() < 1e-9);
        assert!((r.x[0] - 2.0).abs() < 1e-9 && (r.x[1] - 6.0).abs() < 1e-9);
        // duals (0, 1.5, 1)
        assert!(r.duals[0].abs() < 1e-9);
        assert!((r.duals[1] - 1.5).abs() < 1e-9);
        assert!((r.duals[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_needs_phase_one() {
        // max x + y, x + y = 1, x - y ≥ 0.5
        let lp = LinearProgram {
            objective: vec![1.0, 2.0],
            rows: vec![row(&[1.0, 1.0], 1.0, 1.0), row(&[1.0, -1.0], 0.5, f64::INFINITY)],
        };
        let r = solve(&lp).unwrap();
        assert_eq!(r.status, SimplexStatus::Optimal);
        assert!((r.x[0] - 0.75).abs() < 1e-9 && (r.x[1] - 0.25).abs() < 1e-9);
        assert!((r.objective - 1.25).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        let lp = LinearProgram {
            objective: vec![1.0],
            rows: vec![row(&[1.0], 2.0, f64::INFINITY), row(&[1.0], f64::NEG_INFINITY, 1.0)],
        };
        assert_eq!(solve(&lp).unwrap().status, SimplexStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let lp = LinearProgram { objective: vec![1.0, 0.0], rows: vec![row(&[1.0, -1.0], f64::NEG_INFINITY, 1.0)] };
        assert_eq!(solve(&lp).unwrap().status, SimplexStatus::Unbounded);
    }

    #[test]
    fn range_row_hits_lower_side() {
        // max -x, 1 ≤ x ≤ 3
        let lp = LinearProgram { objective: vec![-1.0], rows: vec![row(&[1.0], 1.0, 3.0)] };
        let r = solve(&lp).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-12);
        assert!((r.duals[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn bland_mode_agrees_on_degenerate_problem() {
        // Classic cycling example (Beale) in max form.
        let lp = LinearProgram {
            objective: vec![0.75, -150.0, 0.02, -6.0],
            rows: vec![
                row(&[0.25, -60.0, -0.04, 9.0], f64::NEG_INFINITY, 0.0),
                row(&[0.5, -90.0, -0.02, 3.0], f64::NEG_INFINITY, 0.0),
                row(&[0.0, 0.0, 1.0, 0.0], f64::NEG_INFINITY, 1.0),
            ],
        };
        let a = solve(&lp).unwrap();
        let b = solve_with(&lp, &SimplexOptions { bland: true, ..Default::default() }).unwrap();
        assert_eq!(a.status, SimplexStatus::Optimal);
        assert!((a.objective - 0.05).abs() < 1e-9);
        assert!((b.objective - 0.05).abs() < 1e-9);
    }
}
