//! Property suites comparing closed forms and index algorithms against
//! dynamic-programming and finite-horizon oracles on a random arm corpus.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use restart_bandit::dp::{indices_by_bisection, passive_set_scan, value_iteration, BisectionOptions};
use restart_bandit::policy_eval::{dn_values, finite_horizon_eval, horizon_for};
use restart_bandit::whittle::whittle_table_b;
use restart_bandit::{
    default_cost, make_structured_matrix, sample_reset_pmf, Arm, Discount, IndexTable, InfoChain, Model, ResetPmf,
    ThresholdPolicy,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::experiment::derive_seed;

/// One arm of the verification corpus, with the model and parameters it
/// is checked under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusArm {
    pub id: usize,
    pub model: Model,
    pub family: u8,
    pub p: f64,
    pub beta: f64,
    pub cap: usize,
    pub arm: Arm,
}

impl CorpusArm {
    pub fn chain(&self) -> Result<InfoChain, CliError> {
        Ok(InfoChain::new(&self.arm, self.model, self.cap)?)
    }

    pub fn discount(&self) -> Result<Discount, CliError> {
        Ok(Discount::new(self.beta)?)
    }

    fn label(&self) -> String {
        format!(
            "arm {} (model {}, family {}, p = {:.3}, |X| = {}, β = {}, ℓ = {})",
            self.id,
            self.model,
            self.family,
            self.p,
            self.arm.size(),
            self.beta,
            self.cap
        )
    }
}

/// `per_model` random arms, each checked under both models. Families,
/// discounts and truncation levels cycle so that every combination of
/// family in 1..=4, β in {0.9, 0.99} and ℓ in {5, 10} appears.
pub fn corpus(per_model: usize, seed: u64) -> Result<Vec<CorpusArm>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "corpus"));
    let mut out = Vec::with_capacity(2 * per_model);
    for id in 0..per_model {
        let size = rng.random_range(2..=5usize);
        let family = (id % 4) as u8 + 1;
        let beta = [0.9, 0.99][(id / 4) % 2];
        let cap = [5, 10][(id / 8) % 2];
        let p = rng.random_range(0.05..=0.95);
        let q = sample_reset_pmf(size, rng.next_u64())?;
        let arm = Arm::new(make_structured_matrix(family, p, size)?, q, default_cost(size)?)?;
        for model in [Model::A, Model::B] {
            out.push(CorpusArm { id, model, family, p, beta, cap, arm: arm.clone() });
        }
    }
    Ok(out)
}

/// Outcome of one property suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub suite: Suite,
    pub checked: usize,
    pub violations: usize,
    pub max_error: f64,
    pub tolerance: f64,
    /// The first few violations, for diagnosis.
    pub examples: Vec<String>,
}

impl CheckReport {
    fn new(suite: Suite, tolerance: f64) -> Self {
        CheckReport { suite, checked: 0, violations: 0, max_error: 0.0, tolerance, examples: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.checked > 0
    }

    /// Records one comparison whose error must not exceed `limit`.
    fn record(&mut self, error: f64, limit: f64, what: impl FnOnce() -> String) {
        self.checked += 1;
        if error.is_finite() {
            self.max_error = self.max_error.max(error);
        }
        if !(error <= limit) {
            self.fail(what);
        }
    }

    fn fail(&mut self, what: impl FnOnce() -> String) {
        self.violations += 1;
        if self.examples.len() < 5 {
            self.examples.push(what());
        }
    }

    fn merge(mut self, other: CheckReport) -> Self {
        self.checked += other.checked;
        self.violations += other.violations;
        self.max_error = self.max_error.max(other.max_error);
        for e in other.examples {
            if self.examples.len() < 5 {
                self.examples.push(e);
            }
        }
        self
    }

    pub fn summary(&self) -> String {
        format!(
            "[{}] {}: {} checks, {} violations, max error {:.3e} (tolerance {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.checked,
            self.violations,
            self.max_error,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    IndexOracle,
    ClosedForm,
    HandValues,
    Truncation,
    Structure,
}

impl Suite {
    pub const ALL: [Suite; 5] =
        [Suite::IndexOracle, Suite::ClosedForm, Suite::HandValues, Suite::Truncation, Suite::Structure];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::IndexOracle => "index-oracle",
            Suite::ClosedForm => "closed-form",
            Suite::HandValues => "hand-values",
            Suite::Truncation => "truncation",
            Suite::Structure => "structure",
        })
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Suite::ALL
            .into_iter()
            .find(|x| x.to_string() == s)
            .ok_or_else(|| CliError::Config(format!("unknown suite `{s}`")))
    }
}

fn fold_reports(suite: Suite, tol: f64, parts: Vec<CheckReport>) -> CheckReport {
    parts.into_iter().fold(CheckReport::new(suite, tol), CheckReport::merge)
}

/// Whittle indices from the closed form (model A) or adaptive greedy
/// (model B) against the bisection oracle. `fault` perturbs one index by
/// `10 · tol` before comparing.
pub fn check_index_oracle(corpus: &[CorpusArm], tol: f64, fault: bool) -> Result<CheckReport, CliError> {
    let opts = BisectionOptions { tol_lambda: tol * 1e-3, vi_tol: 1e-11, grid_points: 0 };
    let parts = corpus
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let chain = c.chain()?;
            let beta = c.discount()?;
            let table = IndexTable::compute(&chain, beta)?;
            let mut w = table.values().to_vec();
            if fault && i == 0 {
                w[0] += 10.0 * tol;
            }
            let oracle = indices_by_bisection(&chain, beta, opts)?;
            let mut r = CheckReport::new(Suite::IndexOracle, tol);
            for (s, (a, b)) in w.iter().zip(&oracle).enumerate() {
                r.record((a - b).abs(), tol, || {
                    format!("{}: state {} index {a} vs bisection {b}", c.label(), chain.state(s))
                });
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(fold_reports(Suite::IndexOracle, tol, parts))
}

/// Threshold vectors to evaluate: every uniform threshold, plus for
/// model B `extra` random per-row vectors.
fn threshold_policies(chain: &InfoChain, extra: usize, seed: u64) -> Vec<ThresholdPolicy> {
    let max = chain.cap() + 1;
    let mut out: Vec<ThresholdPolicy> = (0..=max).map(|t| ThresholdPolicy::uniform(chain.rows(), t)).collect();
    if chain.rows() > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..extra {
            out.push(ThresholdPolicy::b((0..chain.rows()).map(|_| rng.random_range(0..=max)).collect()));
        }
    }
    out
}

/// Closed-form D/N tables against backward induction over a horizon
/// with `β^H < 1e-12`.
pub fn check_closed_form(corpus: &[CorpusArm], tol: f64, seed: u64) -> Result<CheckReport, CliError> {
    let parts = corpus
        .par_iter()
        .map(|c| {
            let chain = c.chain()?;
            let beta = c.discount()?;
            let horizon = horizon_for(beta, 1e-12);
            let mut r = CheckReport::new(Suite::ClosedForm, tol);
            let policy_seed = derive_seed(seed, &format!("thresholds/{}/{}", c.id, c.model));
            for policy in threshold_policies(&chain, 16, policy_seed) {
                let closed = dn_values(&chain, &policy, beta)?;
                let fh = finite_horizon_eval(&chain, &policy, beta, horizon)?.value;
                for s in 0..chain.len() {
                    let err = (closed.d[s] - fh.d[s]).abs().max((closed.n[s] - fh.n[s]).abs());
                    r.record(err, tol, || {
                        format!(
                            "{}: θ = {:?} at {}: D {} vs {}, N {} vs {}",
                            c.label(),
                            policy.thresholds(),
                            chain.state(s),
                            closed.d[s],
                            fh.d[s],
                            closed.n[s],
                            fh.n[s]
                        )
                    });
                }
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(fold_reports(Suite::ClosedForm, tol, parts))
}

/// The two-state arm `P₁(0.5)`, `Q = δ₁`, default costs, `β = 0.5`.
pub fn hand_arm() -> Result<Arm, CliError> {
    Ok(Arm::new(make_structured_matrix(1, 0.5, 2)?, ResetPmf::point_mass(2, 0), default_cost(2)?)?)
}

/// Hand-derived values of [`hand_arm`]: `D⁽¹⁾(0) = 2/3`, `N⁽¹⁾(0) = 1/3`,
/// `w(0) = −2`, `w(1) = −1.25`, in both models (the reset is a point
/// mass, so row 1 of model B coincides with model A).
pub fn check_hand_values(tol: f64) -> Result<CheckReport, CliError> {
    let arm = hand_arm()?;
    let beta = Discount::new(0.5)?;
    let mut r = CheckReport::new(Suite::HandValues, tol);
    let a = InfoChain::new(&arm, Model::A, 6)?;
    let dn = dn_values(&a, &ThresholdPolicy::a(1), beta)?;
    let wa = IndexTable::compute(&a, beta)?;
    let b = InfoChain::new(&arm, Model::B, 6)?;
    let dnb = dn_values(&b, &ThresholdPolicy::b(vec![1, 1]), beta)?;
    let wb = whittle_table_b(&b, beta)?;
    let expected = [
        ("D(1)(0), model A", dn.d_at(0, 0), 2.0 / 3.0),
        ("N(1)(0), model A", dn.n_at(0, 0), 1.0 / 3.0),
        ("w(0), model A", wa.values()[0], -2.0),
        ("w(1), model A", wa.values()[1], -1.25),
        ("D(1)(1,0), model B", dnb.d_at(0, 0), 2.0 / 3.0),
        ("N(1)(1,0), model B", dnb.n_at(0, 0), 1.0 / 3.0),
        ("w(1,0), model B", wb.index(0, 0), -2.0),
        ("w(1,1), model B", wb.index(0, 1), -1.25),
    ];
    for (name, got, want) in expected {
        r.record((got - want).abs(), tol, || format!("{name}: {got} vs {want}"));
    }
    Ok(r)
}

/// `|V_ℓ(k) − V_L(k)| ≤ β^{ℓ−k+1} span(c_λ)/(1−β)` against a reference
/// truncation `L`, for every `k ≤ ℓ`. Errors are reported as the ratio of
/// the observed difference to the bound.
pub fn check_truncation(
    corpus: &[CorpusArm],
    caps: &[usize],
    reference_cap: usize,
    lambdas: &[f64],
) -> Result<CheckReport, CliError> {
    let vi_tol = 1e-11;
    let parts = corpus
        .par_iter()
        .map(|c| {
            let beta = c.discount()?;
            let b = beta.get();
            let mut r = CheckReport::new(Suite::Truncation, 1.0);
            let reference = InfoChain::new(&c.arm, c.model, reference_cap)?;
            let cost = c.arm.cost();
            for &lambda in lambdas {
                let vr = value_iteration(&reference, lambda, beta, vi_tol, None)?;
                let (cmin, cmax) = cost
                    .passive
                    .iter()
                    .copied()
                    .chain(cost.active.iter().map(|x| x + lambda))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
                let span = cmax - cmin;
                for &cap in caps {
                    let chain = InfoChain::new(&c.arm, c.model, cap)?;
                    let v = value_iteration(&chain, lambda, beta, vi_tol, None)?;
                    for row in 0..chain.rows() {
                        for k in 0..=cap {
                            let bound = b.powi((cap - k + 1) as i32) * span / (1.0 - b);
                            let diff = (v.v_at(row, k) - vr.v_at(row, k)).abs();
                            // ratio to the bound; slack covers the two value-iteration tolerances
                            r.record(diff / (bound + 2.0 * vi_tol), 1.0, || {
                                format!("{}: ℓ = {cap}, λ = {lambda}, row {row}, k = {k}: |ΔV| = {diff} > {bound}", c.label())
                            });
                        }
                    }
                }
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(fold_reports(Suite::Truncation, 1.0, parts))
}

/// On a uniform `λ` grid spanning the arm's indices: the optimal policy
/// is a threshold in `k` on every row, passive sets increase with `λ`,
/// `V` is nondecreasing in `k` and `H(·,1) − H(·,0)` is nonincreasing in `k`.
pub fn check_structure(corpus: &[CorpusArm], grid_points: usize, tol: f64) -> Result<CheckReport, CliError> {
    let vi_tol = 1e-11;
    let parts = corpus
        .par_iter()
        .map(|c| {
            let chain = c.chain()?;
            let beta = c.discount()?;
            let table = IndexTable::compute(&chain, beta)?;
            let (lo, hi) = table
                .values()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)));
            let (lo, hi) = (lo - 1.0, hi + 1.0);
            let grid: Vec<f64> = (0..grid_points)
                .map(|i| lo + (hi - lo) * i as f64 / (grid_points - 1).max(1) as f64)
                .collect();
            let mut r = CheckReport::new(Suite::Structure, tol);
            let scan = passive_set_scan(&chain, &grid, beta, vi_tol)?;
            r.checked += 1;
            if !scan.indexable {
                r.fail(|| format!("{}: passive sets not nested along the λ grid", c.label()));
            }
            for (&lambda, set) in grid.iter().zip(&scan.sets) {
                r.checked += 1;
                if set.to_thresholds().is_err() {
                    r.fail(|| format!("{}: λ = {lambda}: optimal policy is not a threshold in k", c.label()));
                }
                let vf = value_iteration(&chain, lambda, beta, vi_tol, None)?;
                let w = chain.width();
                for row in 0..chain.rows() {
                    for k in 0..chain.cap() {
                        let i = row * w + k;
                        let dv = vf.v[i] - vf.v[i + 1];
                        r.record(dv, tol, || {
                            format!("{}: λ = {lambda}: V decreases from k = {k} to {} on row {row}", c.label(), k + 1)
                        });
                        let dh = (vf.h1[i + 1] - vf.h0[i + 1]) - (vf.h1[i] - vf.h0[i]);
                        r.record(dh, tol, || {
                            format!("{}: λ = {lambda}: H not submodular at k = {k} on row {row}", c.label())
                        });
                    }
                }
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(fold_reports(Suite::Structure, tol, parts))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub arms_per_model: usize,
    pub truncation_arms: usize,
    pub seed: u64,
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { arms_per_model: 50, truncation_arms: 20, seed: 7, inject_fault: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub arms_per_model: usize,
    pub suites: Vec<CheckReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(CheckReport::passed)
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<CheckReport, CliError> {
    match suite {
        Suite::IndexOracle => check_index_oracle(&corpus(opts.arms_per_model, opts.seed)?, 1e-6, opts.inject_fault),
        Suite::ClosedForm => check_closed_form(&corpus(opts.arms_per_model, opts.seed)?, 1e-8, opts.seed),
        Suite::HandValues => check_hand_values(1e-12),
        Suite::Truncation => check_truncation(&corpus(opts.truncation_arms, opts.seed)?, &[5, 10, 20], 200, &[-5.0, 0.0, 5.0]),
        Suite::Structure => check_structure(&corpus(opts.arms_per_model, opts.seed)?, 50, 1e-9),
    }
}

/// Runs the selected suites in order; an empty selection is an error.
pub fn run_verify(suites: &[Suite], opts: &VerifyOptions) -> Result<VerifyReport, CliError> {
    if suites.is_empty() {
        return Err(CliError::Config("no verification suite selected".into()));
    }
    let suites = suites.iter().map(|&s| run_suite(s, opts)).collect::<Result<Vec<_>, _>>()?;
    Ok(VerifyReport { seed: opts.seed, arms_per_model: opts.arms_per_model, suites })
}
