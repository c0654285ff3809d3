//! Exact evaluation of threshold policies on the truncated information-state
//! chain.
//!
//! For a threshold policy the chain renews every time the arm is activated,
//! so the discounted cost `D` and discounted activation measure `N` reduce to
//! the cost `L` and discount `M` accumulated up to the first activation plus
//! a renewal term. Model A renews into the single state `k = 0` and has a
//! closed form; model B renews into `(r, 0)` with probability `Q_r`, which
//! gives a `|X| × |X|` linear system `(I - Z) D(0) = L(0)` with
//! `Z_{sr} = β^{θ_s + 1} Q_r`.
//!
//! States with `k >= θ` activate immediately. The sentinel `θ = ℓ + 1` never
//! activates; its passive run absorbs at `k = ℓ`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{Discount, InfoChain, Model};

/// Per-row activation thresholds: row `r` is active at `k` iff `k >= θ_r`.
/// Model A uses a single row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    thresholds: Vec<usize>,
}

impl ThresholdPolicy {
    pub fn a(theta: usize) -> Self {
        ThresholdPolicy { thresholds: vec![theta] }
    }

    pub fn b(thresholds: Vec<usize>) -> Self {
        ThresholdPolicy { thresholds }
    }

    pub fn uniform(rows: usize, theta: usize) -> Self {
        ThresholdPolicy { thresholds: vec![theta; rows] }
    }

    pub fn thresholds(&self) -> &[usize] {
        &self.thresholds
    }

    pub fn theta(&self, row: usize) -> usize {
        self.thresholds[row]
    }

    #[inline]
    pub fn is_active(&self, row: usize, k: usize) -> bool {
        k >= self.thresholds[row]
    }

    /// Checks the row count and that every threshold lies in `0..=ℓ+1`.
    pub fn validate(&self, chain: &InfoChain) -> Result<()> {
        if self.thresholds.len() != chain.rows() {
            return Err(Error::Dimension(format!(
                "policy has {} thresholds, chain has {} rows",
                self.thresholds.len(),
                chain.rows()
            )));
        }
        let max = chain.cap() + 1;
        match self.thresholds.iter().find(|&&t| t > max) {
            Some(&theta) => Err(Error::ThresholdOutOfRange { theta, max }),
            None => Ok(()),
        }
    }

    pub(crate) fn with_threshold(&self, row: usize, theta: usize) -> Self {
        let mut t = self.thresholds.clone();
        t[row] = theta;
        ThresholdPolicy { thresholds: t }
    }
}

/// Cost-to-first-activation `L` and its discount `M`, indexed like the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LmTable {
    pub l: Vec<f64>,
    pub m: Vec<f64>,
}

/// Normalised discounted cost `D` and activation measure `N` per
/// information state. The penalised cost of the policy is `D + λ N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    pub model: Model,
    pub rows: usize,
    pub width: usize,
    pub d: Vec<f64>,
    pub n: Vec<f64>,
}

impl PolicyValue {
    pub fn d_at(&self, row: usize, k: usize) -> f64 {
        self.d[row * self.width + k]
    }

    pub fn n_at(&self, row: usize, k: usize) -> f64 {
        self.n[row * self.width + k]
    }

    pub fn penalized(&self, lambda: f64) -> Vec<f64> {
        self.d.iter().zip(&self.n).map(|(d, n)| d + lambda * n).collect()
    }

    /// CSV with columns `k,D,N` (model A) or `s,k,D,N` (model B, `s` 1-based).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self.model {
            Model::A => out.push_str("k,D,N\n"),
            Model::B => out.push_str("s,k,D,N\n"),
        }
        for row in 0..self.rows {
            for k in 0..self.width {
                let (d, n) = (self.d_at(row, k), self.n_at(row, k));
                match self.model {
                    Model::A => writeln!(out, "{k},{d},{n}"),
                    Model::B => writeln!(out, "{},{k},{d},{n}", row + 1),
                }
                .expect("writing to a String cannot fail");
            }
        }
        out
    }
}

/// `L` and `M` along one row for threshold `theta`.
fn row_lm(chain: &InfoChain, row: usize, theta: usize, beta: f64) -> (Vec<f64>, Vec<f64>) {
    let cap = chain.cap();
    let width = cap + 1;
    let mut l = vec![0.0; width];
    let mut m = vec![0.0; width];
    if theta > cap {
        // never active: passive run absorbing at k = ℓ
        l[cap] = chain.cost(row, cap, false);
        for k in (0..cap).rev() {
            l[k] = (1.0 - beta) * chain.cost(row, k, false) + beta * l[k + 1];
        }
        return (l, m);
    }
    for k in theta..width {
        l[k] = (1.0 - beta) * chain.cost(row, k, true);
        m[k] = 1.0 - beta;
    }
    for k in (0..theta).rev() {
        l[k] = (1.0 - beta) * chain.cost(row, k, false) + beta * l[k + 1];
        m[k] = beta * m[k + 1];
    }
    (l, m)
}

fn check_model(chain: &InfoChain, model: Model) -> Result<()> {
    if chain.model() != model {
        return Err(Error::InfoMismatch(format!(
            "expected a model-{model} chain, got model {}",
            chain.model()
        )));
    }
    Ok(())
}

fn lm_table(chain: &InfoChain, policy: &ThresholdPolicy, beta: Discount) -> Result<LmTable> {
    policy.validate(chain)?;
    let mut l = Vec::with_capacity(chain.len());
    let mut m = Vec::with_capacity(chain.len());
    for row in 0..chain.rows() {
        let (lr, mr) = row_lm(chain, row, policy.theta(row), beta.get());
        l.extend(lr);
        m.extend(mr);
    }
    Ok(LmTable { l, m })
}

pub fn lm_values_a(chain: &InfoChain, theta: usize, beta: Discount) -> Result<LmTable> {
    check_model(chain, Model::A)?;
    lm_table(chain, &ThresholdPolicy::a(theta), beta)
}

pub fn lm_values_b(chain: &InfoChain, policy: &ThresholdPolicy, beta: Discount) -> Result<LmTable> {
    check_model(chain, Model::B)?;
    lm_table(chain, policy, beta)
}

/// Renewal discount `β^{max(θ - k, 0) + 1}` for states that will activate;
/// zero for rows that never do.
#[inline]
fn renewal_factor(theta: usize, k: usize, cap: usize, beta: f64) -> f64 {
    if theta > cap {
        0.0
    } else {
        beta.powi((theta.saturating_sub(k) + 1) as i32)
    }
}

/// Closed-form `D`/`N` of the model-A threshold policy `theta`.
pub fn dn_values_a(chain: &InfoChain, theta: usize, beta: Discount) -> Result<PolicyValue> {
    let lm = lm_values_a(chain, theta, beta)?;
    let b = beta.get();
    let cap = chain.cap();
    let (d0, n0) = if theta > cap {
        (0.0, 0.0)
    } else {
        let denom = 1.0 - b.powi(theta as i32 + 1);
        (lm.l[0] / denom, lm.m[0] / denom)
    };
    let mut d = lm.l;
    let mut n = lm.m;
    for k in 0..chain.width() {
        let f = renewal_factor(theta, k, cap, b);
        d[k] += f * d0;
        n[k] += f * n0;
    }
    Ok(PolicyValue { model: Model::A, rows: 1, width: chain.width(), d, n })
}

/// Solves `(I - Z) x = rhs` for the two right-hand sides `L(0)` and `M(0)`.
fn solve_renewal(
    chain: &InfoChain,
    policy: &ThresholdPolicy,
    l0: &[f64],
    m0: &[f64],
    beta: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = chain.rows();
    let q = chain.reset_weights();
    let cap = chain.cap();
    let mut a = DMatrix::<f64>::identity(rows, rows);
    for s in 0..rows {
        let z = renewal_factor(policy.theta(s), 0, cap, beta);
        if z == 0.0 {
            continue;
        }
        for (r, qr) in q.iter().enumerate() {
            a[(s, r)] -= z * qr;
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(rows, 2);
    for s in 0..rows {
        rhs[(s, 0)] = l0[s];
        rhs[(s, 1)] = m0[s];
    }
    let sol = a.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let d0 = sol.column(0).iter().copied().collect();
    let n0 = sol.column(1).iter().copied().collect();
    Ok((d0, n0))
}

fn assemble_b(
    chain: &InfoChain,
    policy: &ThresholdPolicy,
    mut l: Vec<f64>,
    mut m: Vec<f64>,
    beta: f64,
) -> Result<PolicyValue> {
    let width = chain.width();
    let rows = chain.rows();
    let l0: Vec<f64> = (0..rows).map(|s| l[s * width]).collect();
    let m0: Vec<f64> = (0..rows).map(|s| m[s * width]).collect();
    let (d0, n0) = solve_renewal(chain, policy, &l0, &m0, beta)?;
    let q = DVector::from_column_slice(chain.reset_weights());
    let qd = q.dot(&DVector::from_vec(d0));
    let qn = q.dot(&DVector::from_vec(n0));
    for s in 0..rows {
        for k in 0..width {
            let f = renewal_factor(policy.theta(s), k, chain.cap(), beta);
            l[s * width + k] += f * qd;
            m[s * width + k] += f * qn;
        }
    }
    Ok(PolicyValue { model: chain.model(), rows, width, d: l, n: m })
}

/// `D`/`N` of a model-B threshold policy via a dense solve of the renewal
/// system.
pub fn dn_values_b(chain: &InfoChain, policy: &ThresholdPolicy, beta: Discount) -> Result<PolicyValue> {
    let lm = lm_values_b(chain, policy, beta)?;
    assemble_b(chain, policy, lm.l, lm.m, beta.get())
}

/// Dispatches to the model-appropriate closed form.
pub fn dn_values(chain: &InfoChain, policy: &ThresholdPolicy, beta: Discount) -> Result<PolicyValue> {
    match chain.model() {
        Model::A => {
            policy.validate(chain)?;
            dn_values_a(chain, policy.theta(0), beta)
        }
        Model::B => dn_values_b(chain, policy, beta),
    }
}

/// `L`/`M` rows for every threshold `0..=ℓ+1`, so that evaluating many
/// policies that differ in a few rows only costs the renewal solve.
#[derive(Debug, Clone)]
pub struct RowTables {
    width: usize,
    beta: f64,
    // [row][theta] -> (L, M) along k
    tables: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl RowTables {
    pub fn new(chain: &InfoChain, beta: Discount) -> Self {
        let tables = (0..chain.rows())
            .map(|row| {
                (0..=chain.cap() + 1)
                    .map(|theta| row_lm(chain, row, theta, beta.get()))
                    .collect()
            })
            .collect();
        RowTables { width: chain.width(), beta: beta.get(), tables }
    }

    pub fn evaluate(&self, chain: &InfoChain, policy: &ThresholdPolicy) -> Result<PolicyValue> {
        policy.validate(chain)?;
        let mut l = Vec::with_capacity(chain.len());
        let mut m = Vec::with_capacity(chain.len());
        for (row, t) in self.tables.iter().enumerate() {
            let (lr, mr) = &t[policy.theta(row)];
            l.extend_from_slice(lr);
            m.extend_from_slice(mr);
        }
        debug_assert_eq!(l.len(), chain.rows() * self.width);
        assemble_b(chain, policy, l, m, self.beta)
    }
}

/// Result of the backward-recursion oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHorizonValue {
    pub value: PolicyValue,
    /// Upper bound on the discarded normalised tail, `β^horizon · max cost`.
    pub tail_bound: f64,
}

/// Evaluates an arbitrary stationary policy over `horizon` steps by backward
/// recursion on the truncated chain. Independent of the renewal algebra.
pub fn finite_horizon_eval_with<F>(
    chain: &InfoChain,
    active: F,
    beta: Discount,
    horizon: usize,
) -> Result<FiniteHorizonValue>
where
    F: Fn(usize, usize) -> bool,
{
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let b = beta.get();
    let (rows, width, cap) = (chain.rows(), chain.width(), chain.cap());
    let q = chain.reset_weights();
    let acts: Vec<bool> = (0..chain.len()).map(|i| active(i / width, i % width)).collect();
    let mut d = vec![0.0; chain.len()];
    let mut n = vec![0.0; chain.len()];
    let mut d_next = d.clone();
    let mut n_next = n.clone();
    for _ in 0..horizon {
        let reset_d: f64 = (0..rows).map(|r| q[r] * d[r * width]).sum();
        let reset_n: f64 = (0..rows).map(|r| q[r] * n[r * width]).sum();
        for row in 0..rows {
            for k in 0..width {
                let i = row * width + k;
                let a = acts[i];
                let (cd, cn) = if a {
                    (reset_d, reset_n)
                } else {
                    let j = row * width + (k + 1).min(cap);
                    (d[j], n[j])
                };
                d_next[i] = (1.0 - b) * chain.cost(row, k, a) + b * cd;
                n_next[i] = (1.0 - b) * if a { 1.0 } else { 0.0 } + b * cn;
            }
        }
        std::mem::swap(&mut d, &mut d_next);
        std::mem::swap(&mut n, &mut n_next);
    }
    Ok(FiniteHorizonValue {
        value: PolicyValue { model: chain.model(), rows, width, d, n },
        tail_bound: b.powi(horizon.min(i32::MAX as usize) as i32) * chain.max_cost(),
    })
}

pub fn finite_horizon_eval(
    chain: &InfoChain,
    policy: &ThresholdPolicy,
    beta: Discount,
    horizon: usize,
) -> Result<FiniteHorizonValue> {
    policy.validate(chain)?;
    finite_horizon_eval_with(chain, |r, k| policy.is_active(r, k), beta, horizon)
}

/// Smallest horizon with `β^horizon < eps`.
pub fn horizon_for(beta: Discount, eps: f64) -> usize {
    ((eps.ln() / beta.get().ln()).floor() as usize) + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::{default_cost, Arm};
    use crate::matrix::{make_structured_matrix, ResetPmf};

    fn toy_chain(model: Model, cap: usize) -> InfoChain {
        let arm = Arm::new(
            make_structured_matrix(1, 0.5, 2).unwrap(),
            ResetPmf::point_mass(2, 0),
            default_cost(2).unwrap(),
        )
        .unwrap();
        InfoChain::new(&arm, model, cap).unwrap()
    }

    fn half() -> Discount {
        Discount::new(0.5).unwrap()
    }

    #[test]
    fn toy_lm_values() {
        let chain = toy_chain(Model::A, 5);
        let lm = lm_values_a(&chain, 1, half()).unwrap();
        assert!((lm.l[0] - 0.5).abs() < 1e-15);
        assert!((lm.m[0] - 0.25).abs() < 1e-15);
        // k = θ
        assert_eq!(lm.m[1], 0.5);
        let lm0 = lm_values_a(&chain, 0, half()).unwrap();
        assert_eq!(lm0.l[0], 0.5 * 2.0);
    }

    #[test]
    fn toy_dn_values() {
        let chain = toy_chain(Model::A, 5);
        let v1 = dn_values_a(&chain, 1, half()).unwrap();
        assert!((v1.d[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((v1.n[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((v1.d[1] - 4.0 / 3.0).abs() < 1e-12);
        assert!((v1.n[1] - 2.0 / 3.0).abs() < 1e-12);
        let v2 = dn_values_a(&chain, 2, half()).unwrap();
        assert!((v2.d[0] - 3.0 / 7.0).abs() < 1e-12);
        assert!((v2.n[0] - 1.0 / 7.0).abs() < 1e-12);
        let v0 = dn_values_a(&chain, 0, half()).unwrap();
        assert!(v0.n.iter().all(|&n| (n - 1.0).abs() < 1e-15));
    }

    #[test]
    fn toy_model_b_row() {
        let chain = toy_chain(Model::B, 5);
        let lm = lm_values_b(&chain, &ThresholdPolicy::b(vec![1, 0]), half()).unwrap();
        assert!((lm.l[0] - 0.5).abs() < 1e-15);
        assert_eq!(lm.l[chain.index(1, 0)], 0.5 * 2.0);
    }

    #[test]
    fn threshold_range_checked() {
        let chain = toy_chain(Model::A, 3);
        assert_eq!(
            dn_values_a(&chain, 5, half()),
            Err(Error::ThresholdOutOfRange { theta: 5, max: 4 })
        );
        let chain_b = toy_chain(Model::B, 3);
        assert!(dn_values_b(&chain_b, &ThresholdPolicy::b(vec![1]), half()).is_err());
        assert!(dn_values_b(&chain, &ThresholdPolicy::b(vec![1]), half()).is_err());
    }

    #[test]
    fn never_active_has_zero_activation() {
        let chain = toy_chain(Model::B, 4);
        let v = dn_values_b(&chain, &ThresholdPolicy::uniform(2, 5), half()).unwrap();
        assert!(v.n.iter().all(|&n| n == 0.0));
        let all = dn_values_b(&chain, &ThresholdPolicy::uniform(2, 0), half()).unwrap();
        assert!(all.n.iter().all(|&n| (n - 1.0).abs() < 1e-14));
    }

    #[test]
    fn finite_horizon_basics() {
        let chain = toy_chain(Model::A, 5);
        let fh = finite_horizon_eval(&chain, &ThresholdPolicy::a(0), half(), 100).unwrap();
        assert!((fh.value.n[0] - 1.0).abs() <= 1e-30);
        let fh1 = finite_horizon_eval(&chain, &ThresholdPolicy::a(1), half(), 200).unwrap();
        assert!((fh1.value.d[0] - 2.0 / 3.0).abs() < 1e-10);
        let one = finite_horizon_eval(&chain, &ThresholdPolicy::a(1), half(), 1).unwrap();
        // a single step: (1-β) c̄(k, g(k))
        assert_eq!(one.value.d[0], 0.0);
        assert_eq!(one.value.d[1], 0.5 * 2.0);
        assert!(finite_horizon_eval(&chain, &ThresholdPolicy::a(1), half(), 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let chain = toy_chain(Model::B, 1);
        let v = dn_values_b(&chain, &ThresholdPolicy::b(vec![1, 1]), half()).unwrap();
        let csv = v.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "s,k,D,N");
        assert_eq!(lines.len(), 1 + 4);
        assert!(lines[1].starts_with("1,0,"));
    }

    #[test]
    fn row_tables_agree_with_direct_solve() {
        let chain = toy_chain(Model::B, 4);
        let beta = Discount::new(0.8).unwrap();
        let tables = RowTables::new(&chain, beta);
        for t in [vec![0, 0], vec![2, 1], vec![5, 3], vec![5, 5]] {
            let p = ThresholdPolicy::b(t);
            assert_eq!(tables.evaluate(&chain, &p).unwrap(), dn_values_b(&chain, &p, beta).unwrap());
        }
    }

    #[test]
    fn horizon_for_bound() {
        let beta = Discount::new(0.9).unwrap();
        let h = horizon_for(beta, 1e-12);
        assert!(0.9f64.powi(h as i32) < 1e-12);
        assert!(0.9f64.powi(h as i32 - 1) >= 1e-12);
    }
}
