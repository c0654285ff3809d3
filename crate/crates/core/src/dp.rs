//! Dynamic-programming ground truth on the truncated information-state
//! chain: value iteration for the penalised single-arm problem, threshold
//! extraction, a bisection index oracle, passive-set scans, and the exact
//! joint optimal policy for small fleets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{Discount, InfoChain, InfoState};
use crate::policy_eval::ThresholdPolicy;
use crate::whittle::PassiveSet;

pub const DEFAULT_VI_TOL: f64 = 1e-10;

/// Optimal value and action tables of the `λ`-penalised single-arm problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub lambda: f64,
    pub rows: usize,
    pub width: usize,
    pub v: Vec<f64>,
    /// Q-values of the passive (`h0`) and active (`h1`) actions.
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
    /// `true` = active. Ties (within the iteration tolerance) go to active.
    pub g: Vec<bool>,
    pub iterations: usize,
}

impl ValueFunction {
    pub fn v_at(&self, row: usize, k: usize) -> f64 {
        self.v[row * self.width + k]
    }

    pub fn is_passive(&self, index: usize) -> bool {
        !self.g[index]
    }

    pub fn passive_set(&self) -> PassiveSet {
        PassiveSet {
            rows: self.rows,
            width: self.width,
            members: self.g.iter().map(|a| !a).collect(),
        }
    }
}

#[inline]
fn bellman(chain: &InfoChain, lambda: f64, beta: f64, v: &[f64], out_h0: &mut [f64], out_h1: &mut [f64]) {
    let width = chain.width();
    let cap = chain.cap();
    let q = chain.reset_weights();
    let reset: f64 = q.iter().enumerate().map(|(r, w)| w * v[r * width]).sum();
    let c0 = chain.passive_costs();
    let c1 = chain.active_costs();
    for row in 0..chain.rows() {
        let base = row * width;
        for k in 0..width {
            let i = base + k;
            out_h0[i] = (1.0 - beta) * c0[i] + beta * v[base + (k + 1).min(cap)];
            out_h1[i] = (1.0 - beta) * (c1[i] + lambda) + beta * reset;
        }
    }
}

/// Value iteration with a span-seminorm stopping rule.
///
/// Stops once `span(V_{t+1} - V_t) < tol (1-β)/β` and shifts the iterate
/// to the midpoint of the resulting bounds, which puts it within `tol / 2`
/// of the fixed point in sup norm. `warm_start` seeds the iteration.
pub fn value_iteration(
    chain: &InfoChain,
    lambda: f64,
    beta: Discount,
    tol: f64,
    warm_start: Option<&[f64]>,
) -> Result<ValueFunction> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    let b = beta.get();
    let n = chain.len();
    let mut v = match warm_start {
        Some(w) if w.len() == n => w.to_vec(),
        Some(w) => {
            return Err(Error::Dimension(format!("warm start has {} entries, expected {n}", w.len())))
        }
        None => vec![0.0; n],
    };
    let mut h0 = vec![0.0; n];
    let mut h1 = vec![0.0; n];
    let threshold = tol * (1.0 - b) / b;
    let mut iterations = 0;
    loop {
        bellman(chain, lambda, b, &v, &mut h0, &mut h1);
        iterations += 1;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let next = h0[i].min(h1[i]);
            let d = next - v[i];
            lo = lo.min(d);
            hi = hi.max(d);
            v[i] = next;
        }
        if hi - lo < threshold {
            let shift = b / (1.0 - b) * 0.5 * (hi + lo);
            v.iter_mut().for_each(|x| *x += shift);
            break;
        }
    }
    bellman(chain, lambda, b, &v, &mut h0, &mut h1);
    let g = h0.iter().zip(&h1).map(|(p, a)| *a <= *p + tol).collect();
    Ok(ValueFunction {
        lambda,
        rows: chain.rows(),
        width: chain.width(),
        v,
        h0,
        h1,
        g,
        iterations,
    })
}

/// Per-row threshold of an optimal action table: the smallest active `k`
/// (`ℓ + 1` when the row is never active). Fails unless every row has the
/// form `0…01…1`.
pub fn extract_threshold(vf: &ValueFunction) -> Result<ThresholdPolicy> {
    vf.passive_set().to_thresholds()
}

/// Bracket guaranteed to contain every index.
pub fn lambda_bracket(chain: &InfoChain, beta: Discount) -> (f64, f64) {
    let r = chain.max_cost() / (1.0 - beta.get()) + 1.0;
    (-r, r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionOptions {
    pub tol_lambda: f64,
    pub vi_tol: f64,
    /// Points of a uniform pre-scan of the bracket used to check that the
    /// passive predicate switches exactly once; 0 disables the scan.
    pub grid_points: usize,
}

impl Default for BisectionOptions {
    fn default() -> Self {
        BisectionOptions { tol_lambda: 1e-8, vi_tol: 1e-11, grid_points: 0 }
    }
}

/// Penalty at which the optimal action at `state` switches from active to
/// passive, located by bisection on `λ`.
pub fn index_by_bisection(
    chain: &InfoChain,
    state: InfoState,
    beta: Discount,
    opts: BisectionOptions,
) -> Result<f64> {
    let idx = chain.index_of(state)?;
    let (mut lo, mut hi) = lambda_bracket(chain, beta);
    let mut warm: Option<Vec<f64>> = None;
    let mut passive_at = |lambda: f64| -> Result<bool> {
        let vf = value_iteration(chain, lambda, beta, opts.vi_tol, warm.as_deref())?;
        let p = vf.is_passive(idx);
        warm = Some(vf.v);
        Ok(p)
    };

    if opts.grid_points >= 2 {
        let mut trace = Vec::with_capacity(opts.grid_points);
        let mut seen_passive = false;
        for i in 0..opts.grid_points {
            let l = lo + (hi - lo) * i as f64 / (opts.grid_points - 1) as f64;
            let p = passive_at(l)?;
            trace.push((l, p));
            if seen_passive && !p {
                return Err(Error::NotIndexable(format!(
                    "state {state} passive then active again along λ: {trace:?}"
                )));
            }
            seen_passive |= p;
        }
    }
    if passive_at(lo)? || !passive_at(hi)? {
        return Err(Error::NotIndexable(format!(
            "state {state} does not switch from active to passive on [{lo}, {hi}]"
        )));
    }
    while hi - lo > opts.tol_lambda {
        let mid = 0.5 * (lo + hi);
        if passive_at(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bisection indices for every state of the chain, in chain order.
pub fn indices_by_bisection(chain: &InfoChain, beta: Discount, opts: BisectionOptions) -> Result<Vec<f64>> {
    (0..chain.len())
        .into_par_iter()
        .map(|i| index_by_bisection(chain, chain.state(i), beta, opts))
        .collect()
}

/// Passive sets along an ascending `λ` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassiveScan {
    pub lambdas: Vec<f64>,
    pub sets: Vec<PassiveSet>,
    /// Sets are nested along the grid.
    pub indexable: bool,
}

pub fn passive_set_scan(chain: &InfoChain, lambdas: &[f64], beta: Discount, tol: f64) -> Result<PassiveScan> {
    if lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig("λ grid must be sorted ascending".into()));
    }
    let mut sets = Vec::with_capacity(lambdas.len());
    let mut warm: Option<Vec<f64>> = None;
    for &l in lambdas {
        let vf = value_iteration(chain, l, beta, tol, warm.as_deref())?;
        sets.push(vf.passive_set());
        warm = Some(vf.v);
    }
    let indexable = sets.windows(2).all(|w| w[0].is_subset_of(&w[1]));
    Ok(PassiveScan { lambdas: lambdas.to_vec(), sets, indexable })
}

/// Admissible activation vectors of the joint problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSet {
    /// Any subset of at most `m` arms, including none.
    AtMost,
    /// Exactly `m` arms.
    Exactly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointOptions {
    pub tol: f64,
    pub max_states: usize,
    pub actions: ActionSet,
}

impl Default for JointOptions {
    fn default() -> Self {
        JointOptions { tol: DEFAULT_VI_TOL, max_states: 1_000_000, actions: ActionSet::AtMost }
    }
}

/// Product of per-arm truncated chains.
#[derive(Debug, Clone)]
pub struct JointSpace<'a> {
    chains: &'a [InfoChain],
    strides: Vec<usize>,
    len: usize,
}

impl<'a> JointSpace<'a> {
    pub fn new(chains: &'a [InfoChain], max_states: usize) -> Result<Self> {
        let mut strides = Vec::with_capacity(chains.len());
        let mut len: usize = 1;
        for c in chains {
            strides.push(len);
            len = len
                .checked_mul(c.len())
                .filter(|&l| l <= max_states)
                .ok_or(Error::StateSpaceTooLarge {
                    states: chains.iter().map(|c| c.len() as f64).product::<f64>() as usize,
                    cap: max_states,
                })?;
        }
        Ok(JointSpace { chains, strides, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn arms(&self) -> usize {
        self.chains.len()
    }

    pub fn component(&self, joint: usize, arm: usize) -> usize {
        (joint / self.strides[arm]) % self.chains[arm].len()
    }

    pub fn encode(&self, infos: &[InfoState]) -> Result<usize> {
        if infos.len() != self.chains.len() {
            return Err(Error::Dimension(format!(
                "{} information states for {} arms",
                infos.len(),
                self.chains.len()
            )));
        }
        let mut j = 0;
        for ((c, s), info) in self.chains.iter().zip(&self.strides).zip(infos) {
            j += c.index_of(*info)? * s;
        }
        Ok(j)
    }

    fn stage_cost(&self, joint: usize, mask: u64) -> f64 {
        self.chains
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let idx = self.component(joint, i);
                let w = c.width();
                c.cost(idx / w, idx % w, mask >> i & 1 == 1)
            })
            .sum()
    }

    /// `E[V(next joint state)]` under activation mask `mask`.
    fn expected_next(&self, joint: usize, mask: u64, v: &[f64]) -> f64 {
        let mut base = 0;
        let mut active: Vec<usize> = Vec::new();
        for (i, c) in self.chains.iter().enumerate() {
            if mask >> i & 1 == 1 {
                active.push(i);
            } else {
                let idx = self.component(joint, i);
                let w = c.width();
                let next = (idx / w) * w + (idx % w + 1).min(c.cap());
                base += next * self.strides[i];
            }
        }
        // enumerate post-reset rows of all active arms
        let mut total = 0.0;
        let mut digits = vec![0usize; active.len()];
        loop {
            let mut j = base;
            let mut p = 1.0;
            for (d, &i) in digits.iter().zip(&active) {
                let c = &self.chains[i];
                p *= c.reset_weights()[*d];
                j += d * c.width() * self.strides[i];
            }
            if p > 0.0 {
                total += p * v[j];
            }
            let mut pos = 0;
            loop {
                if pos == digits.len() {
                    return total;
                }
                digits[pos] += 1;
                if digits[pos] < self.chains[active[pos]].rows() {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
        }
    }

    /// Probability distribution of the initial joint state: every arm at
    /// `k = 0`, with the model-B row drawn from `Q`.
    pub fn initial_distribution(&self) -> Vec<(usize, f64)> {
        let mut dist = vec![(0usize, 1.0f64)];
        for (i, c) in self.chains.iter().enumerate() {
            let mut next = Vec::with_capacity(dist.len() * c.rows());
            for &(j, p) in &dist {
                for (r, &q) in c.reset_weights().iter().enumerate() {
                    if q > 0.0 {
                        next.push((j + c.index(r, 0) * self.strides[i], p * q));
                    }
                }
            }
            dist = next;
        }
        dist
    }

    /// Expected value of a joint table under [`Self::initial_distribution`].
    pub fn initial_value(&self, v: &[f64]) -> f64 {
        self.initial_distribution().iter().map(|&(j, p)| p * v[j]).sum()
    }
}

fn enumerate_masks(n: usize, m: usize, set: ActionSet) -> Vec<u64> {
    let mut masks: Vec<u64> = (0u64..1 << n)
        .filter(|mask| {
            let c = mask.count_ones() as usize;
            match set {
                ActionSet::AtMost => c <= m,
                ActionSet::Exactly => c == m,
            }
        })
        .collect();
    // more activations first so that ties resolve towards acting
    masks.sort_by_key(|mask| (std::cmp::Reverse(mask.count_ones()), *mask));
    masks
}

/// Optimal stationary policy of the joint information-state MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPolicy {
    pub m: usize,
    pub dims: Vec<usize>,
    /// Activation bitmask per joint state (bit `i` = arm `i`).
    pub actions: Vec<u64>,
    pub value: Vec<f64>,
    pub iterations: usize,
}

impl JointPolicy {
    pub fn mask_at(&self, joint: usize) -> u64 {
        self.actions[joint]
    }

    pub fn encode(&self, chains: &[InfoChain], infos: &[InfoState]) -> Result<usize> {
        JointSpace::new(chains, usize::MAX)?.encode(infos)
    }

    pub fn action(&self, chains: &[InfoChain], infos: &[InfoState]) -> Result<Vec<bool>> {
        let j = self.encode(chains, infos)?;
        let mask = self.actions[j];
        Ok((0..self.dims.len()).map(|i| mask >> i & 1 == 1).collect())
    }

    /// Value under the initial distribution.
    pub fn initial_value(&self, chains: &[InfoChain]) -> Result<f64> {
        Ok(JointSpace::new(chains, usize::MAX)?.initial_value(&self.value))
    }
}

pub fn joint_optimal_policy(
    chains: &[InfoChain],
    m: usize,
    beta: Discount,
    opts: JointOptions,
) -> Result<JointPolicy> {
    if chains.is_empty() || chains.len() > 63 || m == 0 || m > chains.len() {
        return Err(Error::InvalidFleet(format!("need 1 <= m <= n <= 63, got n = {}, m = {m}", chains.len())));
    }
    let space = JointSpace::new(chains, opts.max_states)?;
    let masks = enumerate_masks(chains.len(), m, opts.actions);
    let b = beta.get();
    let costs: Vec<Vec<f64>> = (0..space.len())
        .into_par_iter()
        .map(|j| masks.iter().map(|&mk| (1.0 - b) * space.stage_cost(j, mk)).collect())
        .collect();
    let mut v = vec![0.0; space.len()];
    let threshold = opts.tol * (1.0 - b) / b;
    let mut iterations = 0;
    loop {
        let next: Vec<f64> = (0..space.len())
            .into_par_iter()
            .map(|j| {
                masks
                    .iter()
                    .zip(&costs[j])
                    .map(|(&mk, c)| c + b * space.expected_next(j, mk, &v))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        iterations += 1;
        let (lo, hi) = next
            .iter()
            .zip(&v)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        v = next;
        if hi - lo < threshold {
            let shift = b / (1.0 - b) * 0.5 * (hi + lo);
            v.iter_mut().for_each(|x| *x += shift);
            break;
        }
    }
    let actions: Vec<u64> = (0..space.len())
        .into_par_iter()
        .map(|j| {
            let mut best = f64::INFINITY;
            let mut best_mask = masks[0];
            for (&mk, c) in masks.iter().zip(&costs[j]) {
                let q = c + b * space.expected_next(j, mk, &v);
                if q < best - opts.tol {
                    best = q;
                    best_mask = mk;
                }
            }
            best_mask
        })
        .collect();
    Ok(JointPolicy {
        m,
        dims: chains.iter().map(|c| c.len()).collect(),
        actions,
        value: v,
        iterations,
    })
}

/// Value of a stationary joint policy by successive approximation to
/// sup-norm accuracy `tol`. `policy` maps a joint index to an activation mask.
pub fn evaluate_joint_policy<F>(chains: &[InfoChain], policy: F, beta: Discount, tol: f64) -> Result<Vec<f64>>
where
    F: Fn(&JointSpace, usize) -> u64 + Sync,
{
    let space = JointSpace::new(chains, usize::MAX)?;
    let b = beta.get();
    let masks: Vec<u64> = (0..space.len()).map(|j| policy(&space, j)).collect();
    let costs: Vec<f64> = (0..space.len())
        .map(|j| (1.0 - b) * space.stage_cost(j, masks[j]))
        .collect();
    let mut v = vec![0.0; space.len()];
    let threshold = tol * (1.0 - b) / b;
    loop {
        let next: Vec<f64> = (0..space.len())
            .into_par_iter()
            .map(|j| costs[j] + b * space.expected_next(j, masks[j], &v))
            .collect();
        let (lo, hi) = next
            .iter()
            .zip(&v)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        v = next;
        if hi - lo < threshold {
            let shift = b / (1.0 - b) * 0.5 * (hi + lo);
            v.iter_mut().for_each(|x| *x += shift);
            return Ok(v);
        }
    }
}
