//! Tabular CMDP instances, the seeded generative model and random instance
//! recipes.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("state {state} / action {action} out of range for {states}x{actions} instance")]
    IndexOutOfRange { state: usize, action: usize, states: usize, actions: usize },
}

/// Seeded ChaCha stream. Cloning copies the stream position.
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Fresh handle on the same seed and a different stream, independent of
    /// how far this handle has advanced.
    pub fn fork(&self, stream: u64) -> Self {
        Self::with_stream(self.seed, stream)
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// One generative-model observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub reward: f64,
    pub costs: Vec<f64>,
    pub next_state: usize,
}

/// Infinite-horizon discounted CMDP.
///
/// Tables are stored flat: `kernel[(s*A + a)*S + s']`, `mean_reward[s*A + a]`,
/// `mean_costs[k][s*A + a]`. Budgets are on the value scale, i.e. they bound
/// the expected discounted cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct CmdpInstance {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub kernel: Vec<f64>,
    pub mean_reward: Vec<f64>,
    pub mean_costs: Vec<Vec<f64>>,
    pub budgets: Vec<f64>,
    pub init_dist: Vec<f64>,
    /// Half-width of the uniform additive observation noise.
    pub noise: f64,
    /// Observation width used by the confidence radii: the spread of the
    /// non-null means plus the noise width.
    pub scale: f64,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    kernel: Vec<Vec<Vec<f64>>>,
    mean_reward: Vec<Vec<f64>>,
    mean_costs: Vec<Vec<Vec<f64>>>,
    budgets: Vec<f64>,
    init_dist: Vec<f64>,
    noise: f64,
    scale: f64,
}

fn nest(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width.max(1)).map(|c| c.to_vec()).collect()
}

impl From<CmdpInstance> for InstanceFile {
    fn from(m: CmdpInstance) -> Self {
        let (ns, na) = (m.num_states, m.num_actions);
        Self {
            num_states: ns,
            num_actions: na,
            gamma: m.gamma,
            kernel: m.kernel.chunks(na * ns).map(|c| nest(c, ns)).collect(),
            mean_reward: nest(&m.mean_reward, na),
            mean_costs: m.mean_costs.iter().map(|c| nest(c, na)).collect(),
            budgets: m.budgets,
            init_dist: m.init_dist,
            noise: m.noise,
            scale: m.scale,
        }
    }
}

impl TryFrom<InstanceFile> for CmdpInstance {
    type Error = ModelError;

    fn try_from(f: InstanceFile) -> Result<Self, ModelError> {
        let (ns, na) = (f.num_states, f.num_actions);
        let shape = |what: &str| ModelError::Invalid(format!("{what} has the wrong shape"));
        if f.kernel.len() != ns || f.kernel.iter().any(|r| r.len() != na || r.iter().any(|p| p.len() != ns)) {
            return Err(shape("kernel"));
        }
        if f.mean_reward.len() != ns || f.mean_reward.iter().any(|r| r.len() != na) {
            return Err(shape("mean_reward"));
        }
        if f.mean_costs.iter().any(|c| c.len() != ns || c.iter().any(|r| r.len() != na)) {
            return Err(shape("mean_costs"));
        }
        let inst = CmdpInstance {
            num_states: ns,
            num_actions: na,
            gamma: f.gamma,
            kernel: f.kernel.into_iter().flatten().flatten().collect(),
            mean_reward: f.mean_reward.into_iter().flatten().collect(),
            mean_costs: f.mean_costs.into_iter().map(|c| c.into_iter().flatten().collect()).collect(),
            budgets: f.budgets,
            init_dist: f.init_dist,
            noise: f.noise,
            scale: f.scale,
        };
        inst.validate()?;
        Ok(inst)
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<(), ModelError> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(ModelError::Invalid(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL * p.len().max(1) as f64 {
        return Err(ModelError::Invalid(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl CmdpInstance {
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn num_constraints(&self) -> usize {
        self.budgets.len()
    }

    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    /// `P(·|s,a)`.
    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let ns = self.num_states;
        let start = self.pair(s, a) * ns;
        &self.kernel[start..start + ns]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (ns, na) = (self.num_states, self.num_actions);
        if ns == 0 || na == 0 {
            return Err(ModelError::Invalid("need at least one state and one action".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ModelError::Invalid(format!("gamma {} outside (0,1)", self.gamma)));
        }
        if self.kernel.len() != ns * na * ns {
            return Err(ModelError::Invalid("kernel has the wrong size".into()));
        }
        for s in 0..ns {
            for a in 0..na {
                check_distribution(self.transition(s, a), &format!("kernel row ({s},{a})"))?;
            }
        }
        if self.mean_reward.len() != ns * na || self.mean_reward.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Invalid("mean_reward has the wrong size or non-finite entries".into()));
        }
        if self.mean_costs.len() != self.budgets.len() {
            return Err(ModelError::Invalid("one budget per cost table is required".into()));
        }
        for c in &self.mean_costs {
            if c.len() != ns * na || c.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Invalid("mean_costs has the wrong size or non-finite entries".into()));
            }
        }
        let cap = self.max_abs_mean() / (1.0 - self.gamma);
        for (k, b) in self.budgets.iter().enumerate() {
            if !(b.is_finite() && *b >= 0.0 && *b <= cap * (1.0 + 1e-12) + 1e-12) {
                return Err(ModelError::Invalid(format!("budget {k} = {b} outside [0, {cap}]")));
            }
        }
        if self.init_dist.len() != ns {
            return Err(ModelError::Invalid("init_dist has the wrong size".into()));
        }
        check_distribution(&self.init_dist, "init_dist")?;
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(ModelError::Invalid("noise must be a finite non-negative half-width".into()));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(ModelError::Invalid("scale must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Largest absolute mean reward or cost, at least 1.
    fn max_abs_mean(&self) -> f64 {
        self.mean_reward
            .iter()
            .chain(self.mean_costs.iter().flatten())
            .fold(1.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Invalid(e.to_string()))
    }
}

/// Draws one observation for `(s, a)`.
///
/// Draw order is fixed: reward noise, then each cost's noise (both skipped when
/// the noise width is zero), then the next state by inverse CDF.
pub fn sample_generative(inst: &CmdpInstance, s: usize, a: usize, rng: &mut RngHandle) -> Result<Sample, ModelError> {
    if s >= inst.num_states || a >= inst.num_actions {
        return Err(ModelError::IndexOutOfRange {
            state: s,
            action: a,
            states: inst.num_states,
            actions: inst.num_actions,
        });
    }
    Ok(draw(inst, s, a, rng))
}

pub(crate) fn draw(inst: &CmdpInstance, s: usize, a: usize, rng: &mut RngHandle) -> Sample {
    let col = inst.pair(s, a);
    let w = inst.noise;
    let jitter = |rng: &mut RngHandle| if w > 0.0 { rng.gen_range(-w..=w) } else { 0.0 };
    let reward = inst.mean_reward[col] + jitter(rng);
    let costs = inst.mean_costs.iter().map(|c| c[col] + jitter(rng)).collect();
    let next_state = sample_index(inst.transition(s, a), rng);
    Sample { reward, costs, next_state }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            last_positive = i;
            acc += pi;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Random instance recipe. Defaults reproduce the numerical-study setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomConfig {
    pub states: usize,
    pub actions: usize,
    pub gamma: f64,
    pub constraints: usize,
    pub seed: u64,
    pub noise: f64,
    /// Interval the non-null mean rewards and costs are drawn from.
    pub mean_range: (f64, f64),
    /// Budget as a fraction of the average per-step cost over all pairs.
    pub budget_fraction: f64,
}

impl Default for RandomConfig {
    fn default() -> Self {
        Self {
            states: 10,
            actions: 10,
            gamma: 0.7,
            constraints: 5,
            seed: 0,
            noise: 0.5,
            mean_range: (1.0, 2.0),
            budget_fraction: 0.9,
        }
    }
}

impl RandomConfig {
    pub fn new(states: usize, actions: usize, gamma: f64, constraints: usize, seed: u64) -> Self {
        Self { states, actions, gamma, constraints, seed, ..Self::default() }
    }
}

fn random_stochastic_row(n: usize, rng: &mut RngHandle) -> Vec<f64> {
    loop {
        let row: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            let mut p: Vec<f64> = row.iter().map(|v| v / total).collect();
            // push the rounding residue onto the largest entry
            let resid = 1.0 - p.iter().sum::<f64>();
            let imax = (0..n).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap_or(0);
            p[imax] += resid;
            return p;
        }
    }
}

/// Random CMDP: uniform kernel rows normalized, rewards and costs uniform in
/// the mean range, action 0 is a null action with zero reward and zero cost,
/// uniform initial distribution.
pub fn random_instance(cfg: &RandomConfig) -> Result<CmdpInstance, ModelError> {
    if cfg.states == 0 || cfg.actions == 0 {
        return Err(ModelError::Invalid("dims must be at least 1".into()));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
        return Err(ModelError::Invalid(format!("gamma {} outside (0,1)", cfg.gamma)));
    }
    let (lo, hi) = cfg.mean_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) || cfg.noise < 0.0 || cfg.budget_fraction < 0.0 {
        return Err(ModelError::Invalid("bad mean range, noise or budget fraction".into()));
    }
    let (ns, na) = (cfg.states, cfg.actions);
    let mut rng = RngHandle::new(cfg.seed);
    let mut kernel = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        kernel.extend(random_stochastic_row(ns, &mut rng));
    }
    let table = |rng: &mut RngHandle| -> Vec<f64> {
        (0..ns * na)
            .map(|col| {
                let v = lo + (hi - lo) * rng.gen::<f64>();
                if col % na == 0 { 0.0 } else { v }
            })
            .collect()
    };
    let mean_reward = table(&mut rng);
    let mean_costs: Vec<Vec<f64>> = (0..cfg.constraints).map(|_| table(&mut rng)).collect();
    let budgets = mean_costs
        .iter()
        .map(|c| cfg.budget_fraction * c.iter().sum::<f64>() / c.len() as f64 / (1.0 - cfg.gamma))
        .collect();
    let inst = CmdpInstance {
        num_states: ns,
        num_actions: na,
        gamma: cfg.gamma,
        kernel,
        mean_reward,
        mean_costs,
        budgets,
        init_dist: vec![1.0 / ns as f64; ns],
        noise: cfg.noise,
        scale: (hi - lo).max(0.0) + 2.0 * cfg.noise,
    };
    inst.validate()?;
    Ok(inst)
}

/// Occupancy of the always-null-action policy when it is strictly inside every
/// budget.
pub fn slater_witness(inst: &CmdpInstance) -> Option<Vec<f64>> {
    let null = crate::policy::PolicyTable::deterministic(inst.num_states, inst.num_actions, &vec![0; inst.num_states]);
    let q = crate::policy::occupancy(inst, &null).ok()?;
    let strict = inst.mean_costs.iter().zip(&inst.budgets).all(|(c, b)| {
        let spent: f64 = c.iter().zip(&q).map(|(ci, qi)| ci * qi).sum();
        spent < (1.0 - inst.gamma) * b
    });
    strict.then_some(q)
}

/// Finite-horizon CMDP. Period tables are stacked period-major:
/// `kernels[h][(s*A + a)*S + s']`, `rewards[h][s*A + a]`,
/// `costs[k][h][s*A + a]`. The last period's kernel is carried but unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicInstance {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub kernels: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    pub costs: Vec<Vec<Vec<f64>>>,
    /// Bounds on expected total cost over the episode.
    pub budgets: Vec<f64>,
    pub init_dist: Vec<f64>,
}

impl EpisodicInstance {
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn transition(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let ns = self.num_states;
        let start = (s * self.num_actions + a) * ns;
        &self.kernels[h][start..start + ns]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (ns, na, hz) = (self.num_states, self.num_actions, self.horizon);
        if ns == 0 || na == 0 || hz == 0 {
            return Err(ModelError::Invalid("need states, actions and at least one period".into()));
        }
        if self.kernels.len() != hz || self.rewards.len() != hz {
            return Err(ModelError::Invalid("one kernel and reward table per period".into()));
        }
        for h in 0..hz {
            if self.kernels[h].len() != ns * na * ns || self.rewards[h].len() != ns * na {
                return Err(ModelError::Invalid(format!("period {h} tables have the wrong size")));
            }
            for s in 0..ns {
                for a in 0..na {
                    check_distribution(self.transition(h, s, a), &format!("kernel ({h},{s},{a})"))?;
                }
            }
        }
        if self.costs.len() != self.budgets.len()
            || self.costs.iter().any(|c| c.len() != hz || c.iter().any(|t| t.len() != ns * na))
        {
            return Err(ModelError::Invalid("cost tables do not match budgets and periods".into()));
        }
        if self.budgets.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(ModelError::Invalid("budgets must be finite and non-negative".into()));
        }
        if self.init_dist.len() != ns {
            return Err(ModelError::Invalid("init_dist has the wrong size".into()));
        }
        check_distribution(&self.init_dist, "init_dist")
    }
}

/// Episodic analogue of [`random_instance`]: per-period kernels and tables,
/// null action 0, budgets a fraction of the summed per-period average cost.
pub fn random_episodic_instance(
    states: usize,
    actions: usize,
    horizon: usize,
    constraints: usize,
    seed: u64,
) -> Result<EpisodicInstance, ModelError> {
    if states == 0 || actions == 0 || horizon == 0 {
        return Err(ModelError::Invalid("dims must be at least 1".into()));
    }
    let mut rng = RngHandle::new(seed);
    let np = states * actions;
    let kernels = (0..horizon)
        .map(|_| (0..np).flat_map(|_| random_stochastic_row(states, &mut rng)).collect())
        .collect();
    let table = |rng: &mut RngHandle| -> Vec<f64> {
        (0..np).map(|col| if col % actions == 0 { 0.0 } else { 1.0 + rng.gen::<f64>() }).collect()
    };
    let rewards: Vec<Vec<f64>> = (0..horizon).map(|_| table(&mut rng)).collect();
    let costs: Vec<Vec<Vec<f64>>> =
        (0..constraints).map(|_| (0..horizon).map(|_| table(&mut rng)).collect()).collect();
    let budgets = costs
        .iter()
        .map(|per_h| 0.9 * per_h.iter().map(|t| t.iter().sum::<f64>() / np as f64).sum::<f64>())
        .collect();
    let inst = EpisodicInstance {
        num_states: states,
        num_actions: actions,
        horizon,
        kernels,
        rewards,
        costs,
        budgets,
        init_dist: vec![1.0 / states as f64; states],
    };
    inst.validate()?;
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CmdpInstance {
        CmdpInstance {
            num_states: 2,
            num_actions: 1,
            gamma: 0.5,
            kernel: vec![0.0, 1.0, 1.0, 0.0],
            mean_reward: vec![0.25, 0.75],
            mean_costs: vec![vec![0.5, 0.0]],
            budgets: vec![0.5],
            init_dist: vec![1.0, 0.0],
            noise: 0.0,
            scale: 1.0,
        }
    }

    #[test]
    fn zero_noise_deterministic_sample() {
        let inst = tiny();
        let mut rng = RngHandle::new(3);
        let s = sample_generative(&inst, 0, 0, &mut rng).unwrap();
        assert_eq!(s, Sample { reward: 0.25, costs: vec![0.5], next_state: 1 });
    }

    #[test]
    fn rejects_bad_index() {
        let mut rng = RngHandle::new(3);
        assert!(matches!(sample_generative(&tiny(), 2, 0, &mut rng), Err(ModelError::IndexOutOfRange { .. })));
    }

    #[test]
    fn single_pair_instance_is_identity() {
        let inst = random_instance(&RandomConfig::new(1, 1, 0.7, 0, 5)).unwrap();
        assert_eq!(inst.kernel, vec![1.0]);
    }

    #[test]
    fn same_seed_same_instance() {
        let cfg = RandomConfig::new(4, 3, 0.7, 2, 11);
        assert_eq!(random_instance(&cfg).unwrap(), random_instance(&cfg).unwrap());
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let inst = random_instance(&RandomConfig::new(3, 2, 0.7, 2, 9)).unwrap();
        let back = CmdpInstance::from_json(&inst.to_json()).unwrap();
        assert_eq!(inst, back);
    }

    #[test]
    fn json_rejects_bad_kernel() {
        let mut inst = tiny();
        inst.kernel = vec![0.5, 0.4, 1.0, 0.0];
        let text = serde_json::to_string(&inst).unwrap();
        assert!(CmdpInstance::from_json(&text).is_err());
    }

    #[test]
    fn appendix_realizations_stay_in_band() {
        let inst = random_instance(&RandomConfig::new(10, 10, 0.7, 5, 1)).unwrap();
        let mut rng = RngHandle::new(2);
        for _ in 0..2000 {
            let s = sample_generative(&inst, 3, 4, &mut rng).unwrap();
            assert!(s.reward >= 0.5 && s.reward <= 2.5);
            assert!(s.costs.iter().all(|c| *c >= 0.5 && *c <= 2.5));
        }
        assert!((inst.scale - 2.0).abs() < 1e-15);
    }

    #[test]
    fn witness_exists_with_positive_budgets() {
        let inst = random_instance(&RandomConfig::new(4, 3, 0.7, 2, 1)).unwrap();
        assert!(slater_witness(&inst).is_some());
        let mut unconstrained = inst.clone();
        unconstrained.mean_costs.clear();
        unconstrained.budgets.clear();
        assert!(slater_witness(&unconstrained).is_some());
    }

    #[test]
    fn witness_absent_when_null_action_is_costly_and_budget_zero() {
        let mut inst = tiny();
        inst.budgets = vec![0.0];
        assert!(slater_witness(&inst).is_none());
    }
}
