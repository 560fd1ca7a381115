mod common;

use cmdp_core::linalg::*;
use cmdp_core::lp::*;
use cmdp_core::model::*;
use cmdp_core::policy::extract_policy;
use cmdp_core::simplex::{self, LinearProgram, Row, SimplexStatus};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_lp_instance(seed: u64) -> CmdpInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = RandomConfig {
        budget_fraction: rng.gen_range(0.3..1.2),
        ..RandomConfig::new(rng.gen_range(1..6), rng.gen_range(1..5), rng.gen_range(0.3..0.95), rng.gen_range(0..4), seed)
    };
    random_instance(&cfg).unwrap()
}

#[test]
fn unconstrained_lp_matches_value_iteration() {
    for seed in 0..10 {
        let inst = random_instance(&RandomConfig::new(3 + seed as usize % 4, 2 + seed as usize % 3, 0.8, 0, seed)).unwrap();
        let sol = solve_lp(&build_infinite_lp(&inst)).unwrap();
        let vi = common::vi_value(&inst);
        assert!((sol.value - (1.0 - inst.gamma) * vi).abs() <= 1e-6, "seed {seed}");
    }
}

#[test]
fn finite_lp_matches_backward_induction() {
    for seed in 0..10u64 {
        for horizon in 1..=3 {
            let inst = random_episodic_instance(3, 3, horizon, 0, seed).unwrap();
            let sol = solve_lp(&build_finite_lp(&inst)).unwrap();
            assert!((sol.value - common::dp_value(&inst)).abs() <= 1e-8, "seed {seed} H {horizon}");
            let block = inst.num_pairs();
            for h in 0..horizon {
                let mass: f64 = sol.q[h * block..(h + 1) * block].iter().sum();
                assert!((mass - 1.0).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn finite_lp_block_structure() {
    let inst = random_episodic_instance(1, 2, 2, 0, 3).unwrap();
    let lp = build_finite_lp(&inst);
    assert_eq!(lp.flow_matrix.to_rows(), vec![vec![1.0, 1.0, 0.0, 0.0], vec![-1.0, -1.0, 1.0, 1.0]]);
    let inst = random_episodic_instance(2, 2, 1, 0, 3).unwrap();
    let lp = build_finite_lp(&inst);
    assert_eq!(lp.flow_rhs, inst.init_dist);
    assert_eq!(lp.flow_matrix.to_rows(), vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]]);
}

#[test]
fn two_cycle_flow_matrix() {
    let inst = common::deterministic_instance(&[vec![1], vec![0]], vec![1.0, 1.0], vec![], vec![], 0.6);
    let lp = build_infinite_lp(&inst);
    assert_eq!(lp.flow_matrix.to_rows(), vec![vec![1.0, -0.6], vec![-0.6, 1.0]]);
}

#[test]
fn duality_gap_over_random_solves() {
    for seed in 0..200 {
        let inst = random_lp_instance(seed);
        let lp = build_infinite_lp(&inst);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, SimplexStatus::Optimal, "seed {seed}");
        let dual = lp.dual_objective(&sol.dual_y, &sol.dual_z, 0.0);
        assert!((sol.value - dual).abs() <= 1e-8 * (1.0 + sol.value.abs()), "seed {seed}: {} vs {dual}", sol.value);
        assert!(lp.max_violation(&sol.q) <= 1e-9, "seed {seed}");
        assert!((sol.q.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(sol.dual_y.iter().all(|y| *y >= -1e-12));
        // dual feasibility Cᵀy + Bᵀz ≥ r
        let lhs: Vec<f64> = lp
            .cost_matrix
            .tr_mul_vec(&sol.dual_y)
            .iter()
            .zip(lp.flow_matrix.tr_mul_vec(&sol.dual_z))
            .map(|(a, b)| a + b)
            .collect();
        for (l, r) in lhs.iter().zip(&lp.objective) {
            assert!(l - r >= -1e-8, "seed {seed}");
        }
    }
}

#[test]
fn text_export_has_one_line_per_row() {
    let inst = random_instance(&RandomConfig::new(3, 2, 0.7, 2, 1)).unwrap();
    let text = build_infinite_lp(&inst).to_text();
    assert_eq!(text.lines().count(), 2 + 2 + 3);
    assert!(text.lines().nth(2).unwrap().starts_with("cost 0 "));
}

/// Bounded dual: min αᵀy + μᵀz s.t. Cᵀy + Bᵀz ≥ r, y ≥ 0, Σy ≤ ρ.
fn bounded_dual(lp: &StandardLp, rho: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let (k, s) = (lp.num_cost_rows(), lp.num_flow_rows());
    let mut objective: Vec<f64> = lp.budgets.iter().map(|a| -a).collect();
    objective.extend(lp.flow_rhs.iter().map(|m| -m));
    objective.extend(lp.flow_rhs.iter().copied());
    let mut rows = Vec::new();
    for col in 0..lp.num_cols() {
        let mut coeffs: Vec<f64> = (0..k).map(|r| lp.cost_matrix[(r, col)]).collect();
        coeffs.extend((0..s).map(|r| lp.flow_matrix[(r, col)]));
        coeffs.extend((0..s).map(|r| -lp.flow_matrix[(r, col)]));
        rows.push(Row { coeffs, lower: lp.objective[col], upper: f64::INFINITY });
    }
    let mut coeffs = vec![1.0; k];
    coeffs.extend(vec![0.0; 2 * s]);
    rows.push(Row { coeffs, lower: f64::NEG_INFINITY, upper: rho });
    let res = simplex::solve(&LinearProgram { objective, rows }).unwrap();
    assert_eq!(res.status, SimplexStatus::Optimal);
    let y = res.x[..k].to_vec();
    let z = (0..s).map(|i| res.x[k + i] - res.x[k + s + i]).collect();
    (-res.objective, y, z)
}

#[test]
fn dual_norm_bound_holds_for_some_optimal_dual() {
    for seed in 0..40 {
        let cfg = RandomConfig { mean_range: (0.0, 1.0), ..RandomConfig::new(4, 3, 0.7, 2, seed) };
        let inst = random_instance(&cfg).unwrap();
        let lp = build_infinite_lp(&inst);
        let min_alpha = lp.budgets.iter().copied().fold(f64::INFINITY, f64::min);
        let (y_bound, z_bound) = (1.0 / min_alpha, 1.0 / ((1.0 - inst.gamma) * min_alpha));
        let sol = solve_lp(&lp).unwrap();
        let ok = |y: &[f64], z: &[f64]| norm_l1(y) <= y_bound + 1e-9 && norm_inf(z) <= z_bound + 1e-9;
        if ok(&sol.dual_y, &sol.dual_z) {
            continue;
        }
        // Slater point is the null policy: zero reward and zero cost, so the
        // restriction radius is V / min α ≤ 1 / min α.
        let rho = sol.value / min_alpha;
        let (value, y, z) = bounded_dual(&lp, rho);
        assert!((value - sol.value).abs() <= 1e-8 * (1.0 + value.abs()), "seed {seed}");
        assert!(ok(&y, &z), "seed {seed}: |y|₁={} |z|∞={}", norm_l1(&y), norm_inf(&z));
    }
}

#[test]
fn brute_force_column_subsets_on_two_by_two() {
    let inst = random_instance(&RandomConfig::new(2, 2, 0.7, 1, 17)).unwrap();
    let lp = build_infinite_lp(&inst);
    let v = solve_lp(&lp).unwrap().value;
    let mut values = std::collections::HashMap::new();
    for mask in 0u32..16 {
        let cols: Vec<usize> = (0..4).filter(|i| mask & (1 << i) != 0).collect();
        values.insert(mask, solve_restricted_primal(&lp, &cols, &lp.all_rows(), 0.0).unwrap().value);
    }
    for (&m, &val) in &values {
        assert!(val <= v + 1e-9);
        for (&m2, &val2) in &values {
            if m2 & m == m2 {
                assert!(val2 <= val + 1e-9, "subset {m2:b} of {m:b}");
            }
        }
    }
    // each state needs at least one action
    assert_eq!(values[&0b0011], f64::NEG_INFINITY);
    let h = cmdp_core::basis::hardness_constants(&lp, 10_000).unwrap();
    let q = solve_lp(&lp).unwrap().q;
    for i in 0..4 {
        if q[i] > 1e-9 {
            let drop = v - values[&(0b1111 & !(1 << i))];
            // dropping a used column either loses value by at least δ₁ or is
            // absorbed by an alternative optimum
            assert!(drop <= 1e-9 || drop >= h.delta1 - 1e-12);
        }
    }
}

#[test]
fn square_system_residuals() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::from_fn(8, 8, |i, j| if i == j { 4.0 } else { 0.0 } + rng.gen_range(-1.0..1.0));
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let x = solve_square_system(&a, &b).unwrap();
        let r: f64 = a.mul_vec(&x).iter().zip(&b).map(|(l, r)| (l - r).abs()).fold(0.0, f64::max);
        let bound = 1e-10 * (spectral_norm(&a) * norm_inf(&x) + norm_inf(&b));
        assert!(r <= bound, "seed {seed}: {r} > {bound}");
        let xp = solve_square_pivoted(&a, &b).unwrap();
        assert!(x.iter().zip(&xp).all(|(u, v)| (u - v).abs() < 1e-10));
    }
    assert_eq!(solve_square_system(&Matrix::diag(&[2.0, 4.0]), &[2.0, 8.0]).unwrap(), vec![1.0, 2.0]);
    let singular = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
    assert!(matches!(solve_square_system(&singular, &[1.0, 1.0]), Err(LinalgError::Singular { .. })));
    assert!(matches!(solve_square_pivoted(&singular, &[1.0, 1.0]), Err(LinalgError::Singular { .. })));
}

fn nalgebra_singular_values(a: &Matrix) -> Vec<f64> {
    let m = nalgebra::DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

#[test]
fn singular_values_match_reference_svd() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let a = Matrix::from_fn(r, c, |_, _| rng.gen_range(-2.0..2.0));
        let ours = singular_values(&a);
        let theirs = nalgebra_singular_values(&a);
        for (x, y) in ours.iter().zip(&theirs) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + theirs[0]), "seed {seed}");
        }
    }
    assert_eq!(smallest_singular_value(&Matrix::identity(2)), 1.0);
    assert!((smallest_singular_value(&Matrix::diag(&[3.0, 0.5])) - 0.5).abs() < 1e-15);
}

#[test]
fn singular_value_perturbation_inequality() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.gen_range(2..7);
        let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let scale = 10f64.powi(-rng.gen_range(1..6));
        let e = Matrix::from_fn(n, n, |_, _| scale * rng.gen_range(-1.0..1.0));
        let ae = Matrix::from_fn(n, n, |i, j| a[(i, j)] + e[(i, j)]);
        let lhs = (smallest_singular_value(&a) - smallest_singular_value(&ae)).abs();
        let e_norm = nalgebra_singular_values(&e)[0];
        assert!(lhs <= e_norm * (1.0 + 1e-9) + 1e-14, "seed {seed}");
    }
}

#[test]
fn policy_extraction_examples() {
    let p = extract_policy(&[0.0, 0.0, 0.0, 0.0], 1, 4).unwrap();
    assert_eq!(p.row(0), &[0.25; 4]);
    assert!(extract_policy(&[-1e-9, 1.0], 1, 2).is_err());
    assert!(extract_policy(&[-1e-13, 1.0], 1, 2).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extraction_is_scale_invariant(q in proptest::collection::vec(0.0f64..1.0, 6), c in 0.1f64..100.0) {
        let a = extract_policy(&q, 2, 3).unwrap();
        let scaled: Vec<f64> = q.iter().map(|v| v * c).collect();
        let b = extract_policy(&scaled, 2, 3).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for s in 0..2 {
            prop_assert!((a.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_deletion(seed in 0u64..10_000, keep in proptest::collection::vec(any::<bool>(), 12), more in proptest::collection::vec(any::<bool>(), 12)) {
        let inst = random_instance(&RandomConfig::new(3, 4, 0.7, 1, seed)).unwrap();
        let lp = build_infinite_lp(&inst);
        let big: Vec<usize> = (0..12).filter(|&i| keep[i]).collect();
        let small: Vec<usize> = big.iter().copied().filter(|&i| more[i]).collect();
        let vb = solve_restricted_primal(&lp, &big, &lp.all_rows(), 0.0).unwrap().value;
        let vs = solve_restricted_primal(&lp, &small, &lp.all_rows(), 0.0).unwrap().value;
        prop_assert!(vs <= vb + 1e-9);
    }

    #[test]
    fn dual_expansion(seed in 0u64..10_000, drop in proptest::collection::vec(any::<bool>(), 5), extra in proptest::collection::vec(any::<bool>(), 5)) {
        let inst = random_instance(&RandomConfig::new(3, 3, 0.7, 2, seed)).unwrap();
        let lp = build_infinite_lp(&inst);
        let pick = |mask: &dyn Fn(usize) -> bool| RowSet {
            cost: (0..2).filter(|&k| mask(k)).collect(),
            flow: (0..3).filter(|&s| mask(2 + s)).collect(),
        };
        let j = pick(&|i| !drop[i]);
        let j_sub = pick(&|i| !drop[i] && !extra[i]);
        let cols = lp.all_cols();
        let d = solve_restricted_dual(&lp, &cols, &j, 0.0).unwrap();
        let d_sub = solve_restricted_dual(&lp, &cols, &j_sub, 0.0).unwrap();
        let val = |s: &LpSolution| match s.status {
            SimplexStatus::Optimal => s.value,
            SimplexStatus::Infeasible => f64::INFINITY,
            SimplexStatus::Unbounded => f64::NEG_INFINITY,
        };
        prop_assert!(val(&d_sub) >= val(&d) - 1e-9 * (1.0 + val(&d).abs().min(1e12)));
    }
}
