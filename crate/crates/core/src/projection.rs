//! Euclidean projection onto `{q : q_i ≥ l on the support, q_i = 0 off it,
//! Σ q ≤ r}`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("lower bound {lower} on {count} coordinates exceeds radius {radius}")]
    InfeasibleLower { lower: f64, count: usize, radius: f64 },
    #[error("support index {0} out of range")]
    BadSupport(usize),
}

/// Returns `max(v_i − θ, l)` on the support with the smallest `θ ≥ 0` that
/// brings the sum within `radius`, and zero off the support.
pub fn project_capped_simplex(
    v: &[f64],
    radius: f64,
    support: &[usize],
    lower: Option<f64>,
) -> Result<Vec<f64>, ProjectionError> {
    if !(radius > 0.0) {
        return Err(ProjectionError::BadRadius(radius));
    }
    let l = lower.unwrap_or(0.0).max(0.0);
    if l * support.len() as f64 > radius {
        return Err(ProjectionError::InfeasibleLower { lower: l, count: support.len(), radius });
    }
    if let Some(&bad) = support.iter().find(|&&i| i >= v.len()) {
        return Err(ProjectionError::BadSupport(bad));
    }
    let vals: Vec<f64> = support.iter().map(|&i| v[i]).collect();
    let sum_at = |theta: f64| vals.iter().map(|x| (x - theta).max(l)).sum::<f64>();

    let theta = if sum_at(0.0) <= radius {
        0.0
    } else {
        // Sum is piecewise linear in θ with kinks at v_i − l. Walk the kinks in
        // decreasing order until the active set is found.
        let mut kinks: Vec<f64> = vals.iter().map(|x| x - l).collect();
        kinks.sort_by(|a, b| b.total_cmp(a));
        let mut active_sum = 0.0;
        let mut theta = 0.0;
        for (m, &k) in kinks.iter().enumerate() {
            active_sum += k + l;
            let count = (m + 1) as f64;
            let inactive = (kinks.len() - m - 1) as f64 * l;
            // θ with Σ_active (v − θ) + inactive·l = r
            let t = (active_sum - (radius - inactive)) / count;
            let next = kinks.get(m + 1).copied().unwrap_or(f64::NEG_INFINITY);
            if t >= next {
                theta = t.max(0.0);
                break;
            }
        }
        theta
    };
    let mut out = vec![0.0; v.len()];
    for (&i, x) in support.iter().zip(&vals) {
        out[i] = (x - theta).max(l);
    }
    Ok(out)
}
