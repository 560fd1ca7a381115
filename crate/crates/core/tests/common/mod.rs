#![allow(dead_code)]

use cmdp_core::estimation::EmpiricalEstimates;
use cmdp_core::model::{CmdpInstance, EpisodicInstance, RngHandle};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};

/// One state per row of `next`, action `a` in state `s` moves to `next[s][a]`.
pub fn deterministic_instance(
    next: &[Vec<usize>],
    reward: Vec<f64>,
    costs: Vec<Vec<f64>>,
    budgets: Vec<f64>,
    gamma: f64,
) -> CmdpInstance {
    let ns = next.len();
    let na = next[0].len();
    let mut kernel = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            kernel[(s * na + a) * ns + next[s][a]] = 1.0;
        }
    }
    CmdpInstance {
        num_states: ns,
        num_actions: na,
        gamma,
        kernel,
        mean_reward: reward,
        mean_costs: costs,
        budgets,
        init_dist: vec![1.0 / ns as f64; ns],
        noise: 0.0,
        scale: 1.0,
    }
}

/// Optimal unconstrained value `μ₁ᵀV*` by plain value iteration.
pub fn vi_value(inst: &CmdpInstance) -> f64 {
    let (ns, na) = (inst.num_states, inst.num_actions);
    let mut v = vec![0.0; ns];
    for _ in 0..100_000 {
        let mut next = vec![f64::NEG_INFINITY; ns];
        for s in 0..ns {
            for a in 0..na {
                let col = s * na + a;
                let mut x = inst.mean_reward[col];
                for t in 0..ns {
                    x += inst.gamma * inst.kernel[col * ns + t] * v[t];
                }
                next[s] = next[s].max(x);
            }
        }
        let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if diff < 1e-14 {
            break;
        }
    }
    v.iter().zip(&inst.init_dist).map(|(a, b)| a * b).sum()
}

/// Backward induction for an episodic instance without constraints.
pub fn dp_value(inst: &EpisodicInstance) -> f64 {
    let (ns, na) = (inst.num_states, inst.num_actions);
    let mut v = vec![0.0; ns];
    for h in (0..inst.horizon).rev() {
        let mut next = vec![f64::NEG_INFINITY; ns];
        for s in 0..ns {
            for a in 0..na {
                let mut x = inst.rewards[h][s * na + a];
                if h + 1 < inst.horizon {
                    let p = &inst.kernels[h][(s * na + a) * ns..(s * na + a + 1) * ns];
                    x += p.iter().zip(&v).map(|(p, v)| p * v).sum::<f64>();
                }
                next[s] = next[s].max(x);
            }
        }
        v = next;
    }
    v.iter().zip(&inst.init_dist).map(|(a, b)| a * b).sum()
}

/// Projection onto `{q_i ≥ l on support, 0 elsewhere, Σq ≤ r}` by enumerating
/// which coordinates sit at the lower bound and whether the sum is tight.
pub fn projection_oracle(v: &[f64], r: f64, support: &[usize], l: f64) -> Vec<f64> {
    let m = support.len();
    let vals: Vec<f64> = support.iter().map(|&i| v[i]).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << m) {
        for tight in [false, true] {
            let free: Vec<usize> = (0..m).filter(|i| mask & (1 << i) == 0).collect();
            let at_lower = m - free.len();
            let theta = if tight {
                if free.is_empty() {
                    continue;
                }
                let t = (free.iter().map(|&i| vals[i]).sum::<f64>() + at_lower as f64 * l - r) / free.len() as f64;
                if t < 0.0 {
                    continue;
                }
                t
            } else {
                0.0
            };
            let q: Vec<f64> = (0..m).map(|i| if mask & (1 << i) != 0 { l } else { vals[i] - theta }).collect();
            if q.iter().any(|x| *x < l - 1e-12) || q.iter().sum::<f64>() > r + 1e-12 {
                continue;
            }
            let obj: f64 = q.iter().zip(&vals).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().map_or(true, |(o, _)| obj < *o - 1e-15) {
                best = Some((obj, q));
            }
        }
    }
    let q = best.expect("feasible set is nonempty").1;
    let mut out = vec![0.0; v.len()];
    for (k, &i) in support.iter().enumerate() {
        out[i] = q[k];
    }
    out
}

/// Estimates with `n0` samples per pair drawn through their sufficient
/// statistics: multinomial transition counts and Gaussian sample means (the
/// uniform noise enters through its variance).
pub fn aggregate_estimates(inst: &CmdpInstance, n0: u64, rng: &mut RngHandle) -> EmpiricalEstimates {
    let (ns, na, kc) = (inst.num_states, inst.num_actions, inst.num_constraints());
    let mut est = EmpiricalEstimates::new(ns, na, kc);
    let sd = inst.noise / 3f64.sqrt() / (n0 as f64).sqrt();
    for col in 0..ns * na {
        est.counts[col] = n0;
        let mut left = n0;
        let mut mass = 1.0;
        for t in 0..ns {
            let p = inst.kernel[col * ns + t];
            let c = if t + 1 == ns || left == 0 {
                left
            } else if mass <= 0.0 {
                0
            } else {
                Binomial::new(left, (p / mass).clamp(0.0, 1.0)).unwrap().sample(rng)
            };
            est.transition_counts[col * ns + t] = c;
            left -= c;
            mass -= p;
        }
        let noise = |rng: &mut RngHandle| if sd > 0.0 { Normal::new(0.0, sd).unwrap().sample(rng) } else { 0.0 };
        est.mean_reward[col] = inst.mean_reward[col] + noise(rng);
        for k in 0..kc {
            est.mean_costs[k][col] = inst.mean_costs[k][col] + noise(rng);
        }
    }
    est
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}
