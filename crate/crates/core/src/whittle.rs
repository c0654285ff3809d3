//! Whittle index tables.
//!
//! Model A uses the closed form: the index at `k` is the smallest ratio of
//! cost increase to activation decrease when the threshold moves from `k` to
//! `k + 1`, taken over the starting states where the two activation measures
//! differ.
//!
//! Model B uses the adaptive greedy construction restricted to threshold
//! passive sets: starting from the empty passive set, each round tries to
//! make one more state passive in every row (the frontier), prices each
//! candidate by its smallest cost/activation trade-off ratio, and admits all
//! candidates attaining the minimum at that price.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{Discount, InfoChain, InfoState, Model};
use crate::policy_eval::{dn_values_a, PolicyValue, RowTables, ThresholdPolicy};

/// Relative tolerance when deciding whether two activation measures differ.
pub const LAMBDA_SET_RTOL: f64 = 1e-10;
/// Absolute floor for the same comparison.
pub const LAMBDA_SET_ATOL: f64 = 1e-12;
/// Frontier candidates whose price is within this (relative) distance of
/// the minimum are admitted together.
pub const TIE_RTOL: f64 = 1e-9;

#[inline]
fn differs(a: f64, b: f64) -> bool {
    (a - b).abs() > (LAMBDA_SET_RTOL * a.abs().max(b.abs())).max(LAMBDA_SET_ATOL)
}

/// Smallest trade-off ratio `(D_passive - D_active) / (N_active - N_passive)`
/// over the states where the activation measures differ, together with
/// the minimising state. `more_active` and `more_passive` differ in one
/// threshold.
fn min_ratio(more_active: &PolicyValue, more_passive: &PolicyValue) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for i in 0..more_active.d.len() {
        let (na, np) = (more_active.n[i], more_passive.n[i]);
        if !differs(na, np) {
            continue;
        }
        let r = (more_passive.d[i] - more_active.d[i]) / (na - np);
        if best.is_none_or(|(b, _)| r < b) {
            best = Some((r, i));
        }
    }
    best
}

/// Whittle indices of a model-A arm over `k = 0..=ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexTableA {
    pub w: Vec<f64>,
    /// Soft-check findings, e.g. a decrease of `w` in `k` beyond round-off.
    pub warnings: Vec<String>,
}

impl IndexTableA {
    pub fn index(&self, k: usize) -> f64 {
        self.w[k]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,w\n");
        for (k, w) in self.w.iter().enumerate() {
            writeln!(out, "{k},{w}").expect("writing to a String cannot fail");
        }
        out
    }
}

pub fn whittle_table_a(chain: &InfoChain, beta: Discount) -> Result<IndexTableA> {
    if chain.model() != Model::A {
        return Err(Error::InfoMismatch("closed-form index requires a model-A chain".into()));
    }
    let cap = chain.cap();
    let values: Vec<PolicyValue> = (0..=cap + 1)
        .into_par_iter()
        .map(|theta| dn_values_a(chain, theta, beta))
        .collect::<Result<_>>()?;
    let w = (0..=cap)
        .map(|k| {
            min_ratio(&values[k], &values[k + 1])
                .map(|(r, _)| r)
                .ok_or_else(|| Error::EmptyLambdaSet {
                    state: format!("k={k}"),
                    detail: format!(
                        "N under thresholds {k} and {} agree everywhere to tolerance",
                        k + 1
                    ),
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    let warnings = w
        .windows(2)
        .enumerate()
        .filter(|(_, p)| p[1] < p[0] - 1e-9 * p[0].abs().max(1.0))
        .map(|(k, p)| format!("w({}) = {} < w({k}) = {}", k + 1, p[1], p[0]))
        .collect();
    Ok(IndexTableA { w, warnings })
}

/// Set of passive information states on a truncated chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassiveSet {
    pub rows: usize,
    pub width: usize,
    pub members: Vec<bool>,
}

impl PassiveSet {
    pub fn empty(chain: &InfoChain) -> Self {
        PassiveSet { rows: chain.rows(), width: chain.width(), members: vec![false; chain.len()] }
    }

    pub fn full(chain: &InfoChain) -> Self {
        PassiveSet { rows: chain.rows(), width: chain.width(), members: vec![true; chain.len()] }
    }

    /// States strictly below each row's threshold.
    pub fn from_policy(chain: &InfoChain, policy: &ThresholdPolicy) -> Self {
        let members = (0..chain.len())
            .map(|i| !policy.is_active(i / chain.width(), i % chain.width()))
            .collect();
        PassiveSet { rows: chain.rows(), width: chain.width(), members }
    }

    pub fn contains(&self, row: usize, k: usize) -> bool {
        self.members[row * self.width + k]
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_subset_of(&self, other: &PassiveSet) -> bool {
        self.members.iter().zip(&other.members).all(|(a, b)| !a || *b)
    }

    /// The threshold policy whose passive set this is, if each row is
    /// downward closed in `k`.
    pub fn to_thresholds(&self) -> Result<ThresholdPolicy> {
        let mut t = Vec::with_capacity(self.rows);
        for row in 0..self.rows {
            let r = &self.members[row * self.width..(row + 1) * self.width];
            let theta = r.iter().position(|&m| !m).unwrap_or(self.width);
            if r[theta..].iter().any(|&m| m) {
                return Err(Error::NotThreshold(format!(
                    "row {} is passive above its first active k = {theta}",
                    row + 1
                )));
            }
            t.push(theta);
        }
        Ok(ThresholdPolicy::b(t))
    }
}

/// Next candidate state per row: `(s, θ_s)` for every row that still has an
/// active state. A row with no passive state yet contributes `(s, 0)`.
pub fn frontier(passive: &PassiveSet) -> Result<Vec<(usize, usize)>> {
    let t = passive.to_thresholds()?;
    Ok(frontier_of(&t, passive.width - 1))
}

fn frontier_of(policy: &ThresholdPolicy, cap: usize) -> Vec<(usize, usize)> {
    policy
        .thresholds()
        .iter()
        .enumerate()
        .filter(|(_, &theta)| theta <= cap)
        .map(|(s, &theta)| (s, theta))
        .collect()
}

/// Price of making `y` passive on top of the passive set `passive`,
/// measured at `probe`.
pub fn mu_ratio(
    chain: &InfoChain,
    beta: Discount,
    passive: &PassiveSet,
    y: (usize, usize),
    probe: (usize, usize),
) -> Result<f64> {
    let base = passive.to_thresholds()?;
    let cap = chain.cap();
    if !frontier_of(&base, cap).contains(&y) {
        return Err(Error::InfoMismatch(format!("({}, {}) is not on the frontier", y.0 + 1, y.1)));
    }
    let tables = RowTables::new(chain, beta);
    let h_b = tables.evaluate(chain, &base)?;
    let h_by = tables.evaluate(chain, &base.with_threshold(y.0, y.1 + 1))?;
    let i = chain.index(probe.0, probe.1);
    if !differs(h_b.n[i], h_by.n[i]) {
        return Err(Error::EmptyLambdaSet {
            state: format!("({}, {})", probe.0 + 1, probe.1),
            detail: "activation measures of both policies coincide at the probe".into(),
        });
    }
    Ok((h_by.d[i] - h_b.d[i]) / (h_b.n[i] - h_by.n[i]))
}

/// One round of the greedy construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub lambda: f64,
    /// States admitted to the passive set this round, as `(s, k)` with `s`
    /// 0-based.
    pub admitted: Vec<(usize, usize)>,
    /// Thresholds after the round.
    pub thresholds: Vec<usize>,
}

/// Whittle indices of every information state plus the audit trail of the
/// greedy construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexTableB {
    pub model: Model,
    pub rows: usize,
    pub width: usize,
    pub w: Vec<f64>,
    /// Sorted distinct index values.
    pub breakpoints: Vec<f64>,
    pub steps: Vec<GreedyStep>,
}

impl IndexTableB {
    pub fn index(&self, row: usize, k: usize) -> f64 {
        self.w[row * self.width + k]
    }

    pub fn index_of(&self, info: InfoState) -> f64 {
        self.index(info.row(), info.k())
    }

    /// CSV with columns `s,k,w` (`s` 1-based).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,k,w\n");
        for row in 0..self.rows {
            for k in 0..self.width {
                writeln!(out, "{},{k},{}", row + 1, self.index(row, k))
                    .expect("writing to a String cannot fail");
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Adaptive greedy index computation on any truncated chain. Model B is the
/// intended use; on a model-A chain it reproduces the closed form.
pub fn adaptive_greedy(chain: &InfoChain, beta: Discount) -> Result<IndexTableB> {
    let tables = RowTables::new(chain, beta);
    let cap = chain.cap();
    let mut policy = ThresholdPolicy::uniform(chain.rows(), 0);
    let mut w = vec![f64::NAN; chain.len()];
    let mut steps: Vec<GreedyStep> = Vec::new();
    let max_rounds = chain.len();

    loop {
        let candidates = frontier_of(&policy, cap);
        if candidates.is_empty() {
            break;
        }
        if steps.len() >= max_rounds {
            return Err(Error::NotThreshold("greedy construction did not terminate".into()));
        }
        let base = tables.evaluate(chain, &policy)?;
        let prices: Vec<Option<f64>> = candidates
            .par_iter()
            .map(|&(s, k)| {
                let next = tables.evaluate(chain, &policy.with_threshold(s, k + 1))?;
                Ok(min_ratio(&base, &next).map(|(r, _)| r))
            })
            .collect::<Result<_>>()?;
        let lambda = prices
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !lambda.is_finite() {
            return Err(Error::EmptyLambdaSet {
                state: format!("{:?}", candidates),
                detail: "no frontier candidate changes the activation measure".into(),
            });
        }
        let tie = TIE_RTOL * lambda.abs().max(1.0);
        let admitted: Vec<(usize, usize)> = candidates
            .iter()
            .zip(&prices)
            .filter(|(_, p)| p.is_some_and(|p| p <= lambda + tie))
            .map(|(&y, _)| y)
            .collect();
        for &(s, k) in &admitted {
            w[chain.index(s, k)] = lambda;
            policy = policy.with_threshold(s, k + 1);
        }
        steps.push(GreedyStep { lambda, admitted, thresholds: policy.thresholds().to_vec() });
    }

    debug_assert!(w.iter().all(|v| v.is_finite()));
    let mut breakpoints: Vec<f64> = Vec::new();
    let mut sorted: Vec<f64> = steps.iter().map(|s| s.lambda).collect();
    sorted.sort_by(f64::total_cmp);
    for l in sorted {
        match breakpoints.last() {
            Some(&last) if l - last <= TIE_RTOL * last.abs().max(1.0) => {}
            _ => breakpoints.push(l),
        }
    }
    Ok(IndexTableB {
        model: chain.model(),
        rows: chain.rows(),
        width: chain.width(),
        w,
        breakpoints,
        steps,
    })
}

pub fn whittle_table_b(chain: &InfoChain, beta: Discount) -> Result<IndexTableB> {
    if chain.model() != Model::B {
        return Err(Error::InfoMismatch("adaptive greedy index expects a model-B chain".into()));
    }
    adaptive_greedy(chain, beta)
}

/// Index table of either model, queried by information state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IndexTable {
    A(IndexTableA),
    B(IndexTableB),
}

impl IndexTable {
    pub fn compute(chain: &InfoChain, beta: Discount) -> Result<Self> {
        match chain.model() {
            Model::A => whittle_table_a(chain, beta).map(IndexTable::A),
            Model::B => whittle_table_b(chain, beta).map(IndexTable::B),
        }
    }

    pub fn index(&self, info: InfoState) -> f64 {
        match (self, info) {
            (IndexTable::A(t), InfoState::A { k }) => t.w[k],
            (IndexTable::B(t), InfoState::B { s, k }) => t.index(s, k),
            _ => panic!("information state {info} does not match the index table's model"),
        }
    }

    /// Indices in chain order.
    pub fn values(&self) -> &[f64] {
        match self {
            IndexTable::A(t) => &t.w,
            IndexTable::B(t) => &t.w,
        }
    }

    pub fn to_csv(&self) -> String {
        match self {
            IndexTable::A(t) => t.to_csv(),
            IndexTable::B(t) => t.to_csv(),
        }
    }
}
