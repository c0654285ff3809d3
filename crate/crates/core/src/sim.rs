//! Monte Carlo evaluation of scheduling policies on a fleet of restart arms.
//!
//! Hidden states evolve under `P` (passive) or are redrawn from `Q`
//! (active); policies only see information states. Each arm of each path
//! draws from its own ChaCha8 stream: seed = base seed, stream =
//! `(path << 20) | arm`. Every arm consumes exactly one uniform per step
//! (inverse-CDF sampling), so two policies run with the same seed share
//! their random numbers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arm::{default_cost, Arm};
use crate::dp::JointPolicy;
use crate::error::{Error, Result};
use crate::info::{Discount, InfoChain, InfoState, Model};
use crate::matrix::{equispaced, make_structured_matrix, sample_reset_pmf};
use crate::whittle::IndexTable;

/// Arms per path addressable by the stream-splitting rule.
pub const MAX_ARMS: usize = 1 << 20;

/// `n` arms scheduled under an activation budget `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub arms: Vec<Arm>,
    pub m: usize,
    pub model: Model,
}

impl Fleet {
    pub fn new(arms: Vec<Arm>, m: usize, model: Model) -> Result<Self> {
        if arms.is_empty() || arms.len() > MAX_ARMS || m == 0 || m >= arms.len() {
            return Err(Error::InvalidFleet(format!("need 1 <= m < n, got n = {}, m = {m}", arms.len())));
        }
        Ok(Fleet { arms, m, model })
    }

    pub fn n(&self) -> usize {
        self.arms.len()
    }

    pub fn chains(&self, cap: usize) -> Result<Vec<InfoChain>> {
        self.arms.iter().map(|a| InfoChain::new(a, self.model, cap)).collect()
    }

    /// Sum over arms of the largest per-state cost.
    pub fn max_total_cost(&self) -> f64 {
        self.arms.iter().map(|a| a.cost().max_cost()).sum()
    }
}

/// Heterogeneous fleet of one structured family: arm `i` uses
/// `P_family(p_i)` with `p_i` equispaced in `[0.05, 0.95]`, a reset pmf
/// sampled from a seed derived from `seed`, and default costs.
pub fn structured_fleet(n: usize, m: usize, model: Model, size: usize, family: u8, seed: u64) -> Result<Fleet> {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let cost = default_cost(size)?;
    let arms = equispaced(n, 0.05, 0.95)
        .into_iter()
        .map(|p| {
            let q = sample_reset_pmf(size, seeds.next_u64())?;
            Arm::new(make_structured_matrix(family, p, size)?, q, cost.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Fleet::new(arms, m, model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: usize,
    pub paths: usize,
    pub beta: Discount,
    pub seed: u64,
    /// Truncation level `ℓ` of the information states.
    pub cap: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.paths == 0 || self.cap == 0 {
            return Err(Error::InvalidConfig(format!(
                "horizon, paths and ℓ must be positive (got {}, {}, {})",
                self.horizon, self.paths, self.cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub policy: String,
    #[serde(rename = "J_hat")]
    pub j_hat: f64,
    pub std_err: f64,
    pub paths: usize,
    pub horizon: usize,
    pub seed: u64,
    pub fingerprint: String,
    /// Upper bound on the normalized cost discarded by stopping at the horizon.
    pub tail_bound: f64,
}

impl SimResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Hex SHA-256 prefix identifying a fleet, configuration and policy name.
pub fn fingerprint(fleet: &Fleet, config: &SimConfig, policy: &str) -> Result<String> {
    let doc = serde_json::to_string(&(fleet, config, policy))?;
    let digest = Sha256::digest(doc.as_bytes());
    Ok(hex::encode(&digest[..8]))
}

/// A scheduling rule acting on information states.
///
/// `infos[i]` is arm `i`'s chain index (`row * (ℓ + 1) + k`); the rule
/// writes its choice into `active`, which arrives all `false`.
pub trait Policy: Sync {
    fn name(&self) -> &str;

    fn select(&self, infos: &[usize], active: &mut [bool]);

    /// Checks the rule was built for this fleet and truncation level.
    fn check(&self, fleet: &Fleet, cap: usize) -> Result<()> {
        let _ = (fleet, cap);
        Ok(())
    }
}

/// Activates the `m` arms with the largest indices; lowest arm id wins ties.
#[derive(Debug, Clone)]
pub struct WipPolicy {
    m: usize,
    cap: usize,
    tables: Vec<Vec<f64>>,
}

impl WipPolicy {
    pub fn new(tables: &[IndexTable], m: usize, cap: usize) -> Self {
        WipPolicy { m, cap, tables: tables.iter().map(|t| t.values().to_vec()).collect() }
    }

    /// Computes every arm's index table and wraps them.
    pub fn for_fleet(fleet: &Fleet, cap: usize, beta: Discount) -> Result<Self> {
        let tables = fleet
            .chains(cap)?
            .par_iter()
            .map(|c| IndexTable::compute(c, beta))
            .collect::<Result<Vec<_>>>()?;
        Ok(WipPolicy::new(&tables, fleet.m, cap))
    }

    pub fn index(&self, arm: usize, info: usize) -> f64 {
        self.tables[arm][info]
    }
}

impl Policy for WipPolicy {
    fn name(&self) -> &str {
        "wip"
    }

    fn select(&self, infos: &[usize], active: &mut [bool]) {
        for _ in 0..self.m {
            let mut best: Option<(usize, f64)> = None;
            for (i, &s) in infos.iter().enumerate() {
                if active[i] {
                    continue;
                }
                let w = self.tables[i][s];
                if best.is_none_or(|(_, bw)| w > bw) {
                    best = Some((i, w));
                }
            }
            if let Some((i, _)) = best {
                active[i] = true;
            }
        }
    }

    fn check(&self, fleet: &Fleet, cap: usize) -> Result<()> {
        check_dims(fleet, cap, self.cap, self.m, self.tables.iter().map(|t| t.len()))
    }
}

fn check_dims(fleet: &Fleet, cap: usize, own_cap: usize, m: usize, lens: impl ExactSizeIterator<Item = usize>) -> Result<()> {
    let rows = |a: &Arm| match fleet.model {
        Model::A => 1,
        Model::B => a.size(),
    };
    if own_cap != cap || m != fleet.m || lens.len() != fleet.n() {
        return Err(Error::InfoMismatch(format!(
            "policy built for ℓ = {own_cap}, m = {m}, {} arms; simulating ℓ = {cap}, m = {}, {} arms",
            lens.len(),
            fleet.m,
            fleet.n()
        )));
    }
    for (arm, len) in fleet.arms.iter().zip(lens) {
        if len != rows(arm) * (cap + 1) {
            return Err(Error::InfoMismatch(format!("policy table of length {len} does not fit the arm")));
        }
    }
    Ok(())
}

/// Myopic rule: `m` rounds, each adding the arm of the remaining pool that
/// minimizes the pool's immediate expected cost when it alone is active.
#[derive(Debug, Clone)]
pub struct MypPolicy {
    m: usize,
    cap: usize,
    passive: Vec<Vec<f64>>,
    active: Vec<Vec<f64>>,
}

impl MypPolicy {
    pub fn new(chains: &[InfoChain], m: usize) -> Self {
        MypPolicy {
            m,
            cap: chains.first().map_or(0, |c| c.cap()),
            passive: chains.iter().map(|c| c.passive_costs().to_vec()).collect(),
            active: chains.iter().map(|c| c.active_costs().to_vec()).collect(),
        }
    }
}

impl Policy for MypPolicy {
    fn name(&self) -> &str {
        "myp"
    }

    fn select(&self, infos: &[usize], active: &mut [bool]) {
        for _ in 0..self.m {
            let pool: f64 = (0..infos.len())
                .filter(|&j| !active[j])
                .map(|j| self.passive[j][infos[j]])
                .sum();
            let mut best: Option<(usize, f64)> = None;
            for (i, &s) in infos.iter().enumerate() {
                if active[i] {
                    continue;
                }
                let total = (pool - self.passive[i][s]) + self.active[i][s];
                if best.is_none_or(|(_, bt)| total < bt) {
                    best = Some((i, total));
                }
            }
            if let Some((i, _)) = best {
                active[i] = true;
            }
        }
    }

    fn check(&self, fleet: &Fleet, cap: usize) -> Result<()> {
        check_dims(fleet, cap, self.cap, self.m, self.passive.iter().map(|t| t.len()))
    }
}

/// Table lookup in an exact joint optimal policy.
#[derive(Debug, Clone)]
pub struct OptPolicy {
    joint: JointPolicy,
    cap: usize,
    strides: Vec<usize>,
}

impl OptPolicy {
    pub fn new(joint: JointPolicy, cap: usize) -> Self {
        let mut strides = Vec::with_capacity(joint.dims.len());
        let mut s = 1;
        for d in &joint.dims {
            strides.push(s);
            s *= d;
        }
        OptPolicy { joint, cap, strides }
    }

    pub fn joint(&self) -> &JointPolicy {
        &self.joint
    }
}

impl Policy for OptPolicy {
    fn name(&self) -> &str {
        "opt"
    }

    fn select(&self, infos: &[usize], active: &mut [bool]) {
        let j: usize = infos.iter().zip(&self.strides).map(|(i, s)| i * s).sum();
        let mask = self.joint.mask_at(j);
        for (i, a) in active.iter_mut().enumerate() {
            *a = mask >> i & 1 == 1;
        }
    }

    fn check(&self, fleet: &Fleet, cap: usize) -> Result<()> {
        check_dims(fleet, cap, self.cap, self.joint.m, self.joint.dims.iter().copied())
    }
}

/// Cumulative distribution and inverse-CDF sampling.
#[derive(Debug, Clone)]
struct Sampler {
    cdf: Vec<f64>,
    last: usize,
}

impl Sampler {
    fn new(p: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = p
            .iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect();
        let last = p.iter().rposition(|&x| x > 0.0).unwrap_or(0);
        Sampler { cdf, last }
    }

    #[inline]
    fn draw(&self, u: f64) -> usize {
        self.cdf.iter().position(|&c| u < c).map_or(self.last, |i| i.min(self.last))
    }
}

struct ArmDynamics {
    rows: Vec<Sampler>,
    reset: Sampler,
    cost_passive: Vec<f64>,
    cost_active: Vec<f64>,
    model_b: bool,
    width: usize,
}

impl ArmDynamics {
    fn new(arm: &Arm, model: Model, cap: usize) -> Self {
        ArmDynamics {
            rows: arm.transition().rows().map(Sampler::new).collect(),
            reset: Sampler::new(arm.reset().probabilities()),
            cost_passive: arm.cost().passive.clone(),
            cost_active: arm.cost().active.clone(),
            model_b: model == Model::B,
            width: cap + 1,
        }
    }

    #[inline]
    fn reset_info(&self, x: usize) -> usize {
        if self.model_b {
            x * self.width
        } else {
            0
        }
    }
}

fn path_rngs(seed: u64, path: usize, n: usize) -> Vec<ChaCha8Rng> {
    (0..n)
        .map(|arm| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((path as u64) << 20) | arm as u64);
            rng
        })
        .collect()
}

fn simulate_path(
    dynamics: &[ArmDynamics],
    fleet: &Fleet,
    policy: &dyn Policy,
    config: &SimConfig,
    path: usize,
) -> Result<f64> {
    let n = dynamics.len();
    let beta = config.beta.get();
    let cap = config.cap;
    let mut rngs = path_rngs(config.seed, path, n);
    let mut x: Vec<usize> = Vec::with_capacity(n);
    let mut info: Vec<usize> = Vec::with_capacity(n);
    for (d, rng) in dynamics.iter().zip(rngs.iter_mut()) {
        let x0 = d.reset.draw(rng.random::<f64>());
        x.push(x0);
        info.push(d.reset_info(x0));
    }
    // uncapped history shadow: (last revealed row, steps since activation)
    let mut shadow: Vec<(usize, usize)> = info.iter().map(|&i| (i / (cap + 1), 0)).collect();
    let mut active = vec![false; n];
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..config.horizon {
        active.iter_mut().for_each(|a| *a = false);
        policy.select(&info, &mut active);
        let used = active.iter().filter(|&&a| a).count();
        if used > fleet.m {
            return Err(Error::BudgetExceeded { requested: used, budget: fleet.m });
        }
        let mut step = 0.0;
        for i in 0..n {
            let d = &dynamics[i];
            let u = rngs[i].random::<f64>();
            if active[i] {
                step += d.cost_active[x[i]];
                x[i] = d.reset.draw(u);
                info[i] = d.reset_info(x[i]);
                shadow[i] = (if d.model_b { x[i] } else { 0 }, 0);
            } else {
                step += d.cost_passive[x[i]];
                x[i] = d.rows[x[i]].draw(u);
                let (row, k) = (info[i] / d.width, info[i] % d.width);
                info[i] = row * d.width + (k + 1).min(cap);
                shadow[i].1 += 1;
            }
            debug_assert_eq!(info[i], shadow[i].0 * d.width + shadow[i].1.min(cap));
        }
        total += discount * step;
        discount *= beta;
    }
    Ok((1.0 - beta) * total)
}

/// Pairwise summation in a fixed tree order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Per-path normalized discounted costs, in path order.
pub fn simulate_paths(fleet: &Fleet, policy: &dyn Policy, config: &SimConfig) -> Result<Vec<f64>> {
    config.validate()?;
    policy.check(fleet, config.cap)?;
    let dynamics: Vec<ArmDynamics> = fleet
        .arms
        .iter()
        .map(|a| ArmDynamics::new(a, fleet.model, config.cap))
        .collect();
    (0..config.paths)
        .into_par_iter()
        .map(|p| simulate_path(&dynamics, fleet, policy, config, p))
        .collect()
}

/// Mean and standard error of the estimator.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn simulate(fleet: &Fleet, policy: &dyn Policy, config: &SimConfig) -> Result<SimResult> {
    let values = simulate_paths(fleet, policy, config)?;
    let (j_hat, std_err) = summarize(&values);
    Ok(SimResult {
        policy: policy.name().to_string(),
        j_hat,
        std_err,
        paths: config.paths,
        horizon: config.horizon,
        seed: config.seed,
        fingerprint: fingerprint(fleet, config, policy.name())?,
        tail_bound: config.beta.get().powi(config.horizon as i32) * fleet.max_total_cost(),
    })
}

/// `100 · J(opt) / J(wip)`.
pub fn alpha_opt(j_opt: f64, j_wip: f64) -> Result<f64> {
    if j_wip == 0.0 {
        return Err(Error::ZeroDenominator("J(wip)"));
    }
    Ok(100.0 * j_opt / j_wip)
}

/// `100 · (J(myp) − J(wip)) / J(myp)`; positive when the index rule wins.
pub fn eps_myp(j_myp: f64, j_wip: f64) -> Result<f64> {
    if j_myp == 0.0 {
        return Err(Error::ZeroDenominator("J(myp)"));
    }
    Ok(100.0 * (j_myp - j_wip) / j_myp)
}

/// Information state of arm `arm` encoded by a chain index.
pub fn decode_info(fleet: &Fleet, cap: usize, index: usize) -> InfoState {
    let (row, k) = (index / (cap + 1), index % (cap + 1));
    match fleet.model {
        Model::A => InfoState::A { k },
        Model::B => InfoState::B { s: row, k },
    }
}
