use cmdp_core::estimation::*;
use cmdp_core::lp::{build_infinite_lp, lp_budgets, solve_lp};
use cmdp_core::model::*;
use cmdp_core::simplex::SimplexStatus;

fn collect(inst: &CmdpInstance, n: u64, rng: &mut RngHandle, est: &mut EmpiricalEstimates) {
    for s in 0..inst.num_states {
        for a in 0..inst.num_actions {
            for _ in 0..n {
                est.update(s, a, &sample_generative(inst, s, a, rng).unwrap());
            }
        }
    }
}

/// Largest entrywise error of the reward, cost and transition estimates.
fn max_error(inst: &CmdpInstance, est: &EmpiricalEstimates) -> f64 {
    let mut worst = 0.0f64;
    for col in 0..inst.num_pairs() {
        worst = worst.max((est.mean_reward[col] - inst.mean_reward[col]).abs());
        for k in 0..inst.num_constraints() {
            worst = worst.max((est.mean_costs[k][col] - inst.mean_costs[k][col]).abs());
        }
        let p = est.transition_freq(col);
        for t in 0..inst.num_states {
            worst = worst.max((p[t] - inst.kernel[col * inst.num_states + t]).abs());
        }
    }
    worst
}

#[test]
fn hoeffding_coverage() {
    let inst = random_instance(&RandomConfig::new(2, 2, 0.7, 0, 3)).unwrap();
    let (n, eps) = (10_000u64, 0.01);
    let width = 2.0 * inst.noise;
    let bound = rad(n, eps) * width;
    let col = inst.pair(1, 1);
    let mut covered = 0;
    for seed in 0..500 {
        let mut rng = RngHandle::new(seed);
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_generative(&inst, 1, 1, &mut rng).unwrap().reward;
        }
        if (sum / n as f64 - inst.mean_reward[col]).abs() <= bound {
            covered += 1;
        }
    }
    assert!(covered as f64 >= 0.99 * 500.0, "coverage {covered}/500");
}

#[test]
fn estimates_converge_at_root_n() {
    let inst = random_instance(&RandomConfig::new(3, 2, 0.7, 1, 21)).unwrap();
    let levels: Vec<u64> = (0..11).map(|k| 100u64 << k).collect();
    let seeds = 40;
    let mut errs = vec![Vec::new(); levels.len()];
    for seed in 0..seeds {
        let mut rng = RngHandle::new(seed);
        let mut est = EmpiricalEstimates::new(3, 2, 1);
        let mut have = 0;
        for (i, &n) in levels.iter().enumerate() {
            collect(&inst, n - have, &mut rng, &mut est);
            have = n;
            errs[i].push(max_error(&inst, &est));
        }
    }
    let medians: Vec<f64> = errs
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            (v[v.len() / 2 - 1] + v[v.len() / 2]) / 2.0
        })
        .collect();
    for w in medians.windows(2) {
        assert!(w[1] < w[0], "{medians:?}");
    }
    let factor = (medians[0] / medians[medians.len() - 1]).powf(1.0 / (levels.len() - 1) as f64);
    assert!((1.2..=1.7).contains(&factor), "halving factor {factor}");
}

#[test]
fn sandwich_property() {
    let inst = random_instance(&RandomConfig::new(3, 2, 0.7, 1, 8)).unwrap();
    let lp = build_infinite_lp(&inst);
    let v = solve_lp(&lp).unwrap().value;
    let budgets = lp_budgets(&inst);
    let min_budget = budgets.iter().copied().fold(f64::INFINITY, f64::min);
    let eps = 0.01;
    for n0 in [100u64, 1000] {
        let radius = rad(n0, eps) * radius_multiplier(inst.scale);
        let g = gaps_from_radius(radius, 3, inst.gamma, 1, min_budget).unwrap();
        let mut failures = 0;
        for seed in 0..200 {
            let mut rng = RngHandle::with_stream(seed, n0);
            let mut est = EmpiricalEstimates::new(3, 2, 1);
            collect(&inst, n0, &mut rng, &mut est);
            let elp = build_empirical_lp(&est, inst.gamma, &budgets, &inst.init_dist, radius).unwrap();
            let sol = cmdp_core::lp::solve_restricted_primal(&elp, &elp.all_cols(), &elp.all_rows(), radius).unwrap();
            assert_eq!(sol.status, SimplexStatus::Optimal);
            if !(sol.value >= v - g.gap1 && sol.value <= v + g.gap2) {
                failures += 1;
            }
        }
        let allowed = (inst.num_constraints() * inst.num_pairs()) as f64 * eps * 200.0;
        assert!(failures as f64 <= allowed, "N0={n0}: {failures} failures");
    }
}

#[test]
fn true_optimizer_feasible_within_radius() {
    let inst = random_instance(&RandomConfig::new(3, 3, 0.7, 2, 4)).unwrap();
    let lp = build_infinite_lp(&inst);
    let q = solve_lp(&lp).unwrap().q;
    let n0 = 500;
    let radius = rad(n0, 0.01) * radius_multiplier(inst.scale);
    let mut checked = 0;
    for seed in 0..50 {
        let mut rng = RngHandle::new(seed);
        let mut est = EmpiricalEstimates::new(3, 3, 2);
        collect(&inst, n0, &mut rng, &mut est);
        if max_error(&inst, &est) > radius {
            continue;
        }
        checked += 1;
        let elp = build_empirical_lp(&est, inst.gamma, &lp_budgets(&inst), &inst.init_dist, radius).unwrap();
        for k in 0..2 {
            let lhs: f64 = (0..9).map(|c| elp.cost_matrix[(k, c)] * q[c]).sum();
            assert!(lhs <= elp.budgets[k] + radius + 1e-12);
        }
        for s in 0..3 {
            let lhs: f64 = (0..9).map(|c| elp.flow_matrix[(s, c)] * q[c]).sum();
            assert!((lhs - elp.flow_rhs[s]).abs() <= radius + 1e-12);
        }
    }
    assert!(checked > 40);
}

#[test]
fn exact_limit_reproduces_true_program() {
    let mut inst = random_instance(&RandomConfig::new(2, 2, 0.6, 1, 2)).unwrap();
    inst.noise = 0.0;
    // deterministic kernel so frequencies are exact after one sample
    inst.kernel = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
    let mut est = EmpiricalEstimates::new(2, 2, 1);
    collect(&inst, 3, &mut RngHandle::new(0), &mut est);
    let elp = build_empirical_lp(&est, inst.gamma, &lp_budgets(&inst), &inst.init_dist, 0.0).unwrap();
    assert_eq!(elp, build_infinite_lp(&inst));
}

#[test]
fn episodic_gaps() {
    let g = gaps_episodic(0.1, 2, 3, 1, 0.5);
    assert!((g.gap1 - 0.3).abs() < 1e-15);
    let expect = 0.1 * 2.0 * (1.0 + 6.0) / 0.5 + 0.01 * (2.0 + 12.0) / 0.5;
    assert!((g.gap2 - expect).abs() < 1e-12);
    assert!((episodic_slack(0.1, 3) - 0.3).abs() < 1e-15);
}
