//! Information states, belief reconstruction and the truncated
//! information-state chain that every solver in the crate works on.
//!
//! Under model A the operator sees nothing, so the belief after `k` passive
//! steps since the last activation is `Q P^k`. Under model B the post-reset
//! state `s` is revealed on activation and the belief is `δ_s P^k`. Both are
//! represented here as a chain over `rows × {0..=ℓ}`: model A has a single
//! row and resets to it with probability one, model B has one row per
//! observed state and resets to row `r` with probability `Q_r`. Passive
//! steps move `k -> min(k + 1, ℓ)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arm::Arm;
use crate::error::{Error, Result};
use crate::matrix::{StochasticMatrix, STOCHASTIC_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    A,
    B,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::A => f.write_str("A"),
            Model::B => f.write_str("B"),
        }
    }
}

impl std::str::FromStr for Model {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "A" | "a" => Ok(Model::A),
            "B" | "b" => Ok(Model::B),
            other => Err(format!("unknown observation model {other:?}; expected A or B")),
        }
    }
}

/// Discount factor `β ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Discount(f64);

impl Discount {
    pub fn new(beta: f64) -> Result<Self> {
        if beta > 0.0 && beta < 1.0 {
            Ok(Discount(beta))
        } else {
            Err(Error::InvalidDiscount(beta))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Discount {
    type Error = Error;
    fn try_from(b: f64) -> Result<Self> {
        Discount::new(b)
    }
}

impl From<Discount> for f64 {
    fn from(d: Discount) -> f64 {
        d.0
    }
}

/// Time since last activation (model A) or last observed state plus elapsed
/// time (model B). `s` is a 0-based state index; it prints 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InfoState {
    A { k: usize },
    B { s: usize, k: usize },
}

impl InfoState {
    pub fn model(&self) -> Model {
        match self {
            InfoState::A { .. } => Model::A,
            InfoState::B { .. } => Model::B,
        }
    }

    pub fn k(&self) -> usize {
        match *self {
            InfoState::A { k } | InfoState::B { k, .. } => k,
        }
    }

    /// Row of the truncated chain: 0 under model A, `s` under model B.
    pub fn row(&self) -> usize {
        match *self {
            InfoState::A { .. } => 0,
            InfoState::B { s, .. } => s,
        }
    }
}

impl fmt::Display for InfoState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InfoState::A { k } => write!(f, "k={k}"),
            InfoState::B { s, k } => write!(f, "(s={}, k={k})", s + 1),
        }
    }
}

/// Information-state transition, capping `k` at `cap`.
///
/// Model B activations must supply the freshly drawn post-reset state.
pub fn step_info(
    info: InfoState,
    active: bool,
    revealed_state: Option<usize>,
    cap: usize,
) -> Result<InfoState> {
    match (info, active, revealed_state) {
        (InfoState::A { .. }, _, Some(_)) => Err(Error::UnexpectedRevealedState),
        (InfoState::A { .. }, true, None) => Ok(InfoState::A { k: 0 }),
        (InfoState::A { k }, false, None) => Ok(InfoState::A { k: (k + 1).min(cap) }),
        (InfoState::B { .. }, true, None) => Err(Error::MissingRevealedState),
        (InfoState::B { .. }, true, Some(x)) => Ok(InfoState::B { s: x, k: 0 }),
        (InfoState::B { s, k }, false, _) => Ok(InfoState::B { s, k: (k + 1).min(cap) }),
    }
}

/// Probability vector over the arm's states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief(pub Vec<f64>);

impl Belief {
    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn expect(&self, values: &[f64]) -> f64 {
        self.0.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

/// Belief equivalent to `info`: `Q P^k` (model A) or row `s` of `P^k` (model B).
pub fn belief_of_info(arm: &Arm, info: InfoState) -> Result<Belief> {
    let p = arm.transition();
    let start = match info {
        InfoState::A { .. } => arm.reset().probabilities().to_vec(),
        InfoState::B { s, .. } => {
            if s >= arm.size() {
                return Err(Error::InfoMismatch(format!("state {} outside 1..={}", s + 1, arm.size())));
            }
            let mut v = vec![0.0; arm.size()];
            v[s] = 1.0;
            v
        }
    };
    let mut belief = start;
    for _ in 0..info.k() {
        belief = p.left_mul(&belief);
    }
    normalize(&mut belief);
    Ok(Belief(belief))
}

/// `Σ_x belief(x) c(x, action)`.
pub fn expected_cost(arm: &Arm, info: InfoState, active: bool) -> Result<f64> {
    let b = belief_of_info(arm, info)?;
    let c = if active { &arm.cost().active } else { &arm.cost().passive };
    Ok(b.expect(c))
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL && s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

/// Cached powers `P^0..=P^ℓ` of one arm's deterioration matrix.
#[derive(Debug, Clone)]
pub struct PowerCache {
    powers: Vec<StochasticMatrix>,
}

impl PowerCache {
    pub fn new(p: &StochasticMatrix, cap: usize) -> Self {
        let mut powers = Vec::with_capacity(cap + 1);
        powers.push(StochasticMatrix::identity(p.size()));
        for k in 1..=cap {
            let next = powers[k - 1].mul(p);
            powers.push(next);
        }
        PowerCache { powers }
    }

    pub fn cap(&self) -> usize {
        self.powers.len() - 1
    }

    pub fn power(&self, k: usize) -> &StochasticMatrix {
        &self.powers[k]
    }

    pub fn belief(&self, reset: &[f64], info: InfoState) -> Belief {
        let pk = &self.powers[info.k().min(self.cap())];
        let v = match info {
            InfoState::A { .. } => pk.left_mul(reset),
            InfoState::B { s, .. } => pk.row(s).to_vec(),
        };
        Belief(v)
    }
}

/// The truncated information-state chain of one arm under one observation
/// model, with the expected per-step costs of both actions tabulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoChain {
    model: Model,
    size: usize,
    cap: usize,
    reset: Vec<f64>,
    passive: Vec<f64>,
    active: Vec<f64>,
    max_cost: f64,
    min_cost: f64,
}

impl InfoChain {
    pub fn new(arm: &Arm, model: Model, cap: usize) -> Result<Self> {
        if cap < 1 {
            return Err(Error::InvalidConfig("truncation level ℓ must be at least 1".into()));
        }
        let powers = PowerCache::new(arm.transition(), cap);
        let q = arm.reset().probabilities();
        let rows = match model {
            Model::A => 1,
            Model::B => arm.size(),
        };
        let width = cap + 1;
        let mut passive = vec![0.0; rows * width];
        let mut active = vec![0.0; rows * width];
        for row in 0..rows {
            for k in 0..width {
                let info = match model {
                    Model::A => InfoState::A { k },
                    Model::B => InfoState::B { s: row, k },
                };
                let b = powers.belief(q, info);
                passive[row * width + k] = b.expect(&arm.cost().passive);
                active[row * width + k] = b.expect(&arm.cost().active);
            }
        }
        let reset = match model {
            Model::A => vec![1.0],
            Model::B => q.to_vec(),
        };
        Ok(InfoChain {
            model,
            size: arm.size(),
            cap,
            reset,
            passive,
            active,
            max_cost: arm.cost().max_cost(),
            min_cost: arm.cost().min_cost(),
        })
    }

    pub fn model(&self) -> Model {
        self.model
    }

    /// Number of underlying arm states `|X|`.
    pub fn arm_size(&self) -> usize {
        self.size
    }

    /// Truncation level `ℓ`.
    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn rows(&self) -> usize {
        self.reset.len()
    }

    pub fn width(&self) -> usize {
        self.cap + 1
    }

    pub fn len(&self) -> usize {
        self.rows() * self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row probabilities of the post-activation information state `(r, 0)`.
    pub fn reset_weights(&self) -> &[f64] {
        &self.reset
    }

    #[inline]
    pub fn index(&self, row: usize, k: usize) -> usize {
        row * self.width() + k
    }

    #[inline]
    pub fn cost(&self, row: usize, k: usize, active: bool) -> f64 {
        let i = self.index(row, k);
        if active {
            self.active[i]
        } else {
            self.passive[i]
        }
    }

    pub fn passive_costs(&self) -> &[f64] {
        &self.passive
    }

    pub fn active_costs(&self) -> &[f64] {
        &self.active
    }

    /// Largest per-state cost of the underlying arm.
    pub fn max_cost(&self) -> f64 {
        self.max_cost
    }

    pub fn min_cost(&self) -> f64 {
        self.min_cost
    }

    pub fn state(&self, index: usize) -> InfoState {
        let (row, k) = (index / self.width(), index % self.width());
        match self.model {
            Model::A => InfoState::A { k },
            Model::B => InfoState::B { s: row, k },
        }
    }

    pub fn index_of(&self, info: InfoState) -> Result<usize> {
        if info.model() != self.model || info.row() >= self.rows() || info.k() > self.cap {
            return Err(Error::InfoMismatch(format!(
                "{info} on a model-{} chain with {} rows and ℓ = {}",
                self.model,
                self.rows(),
                self.cap
            )));
        }
        Ok(self.index(info.row(), info.k()))
    }

    pub fn states(&self) -> impl Iterator<Item = InfoState> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }

    /// The information state a freshly reset arm occupies when the reset
    /// lands in arm state `x` (model A ignores `x`).
    pub fn reset_state(&self, x: usize) -> InfoState {
        match self.model {
            Model::A => InfoState::A { k: 0 },
            Model::B => InfoState::B { s: x, k: 0 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::default_cost;
    use crate::matrix::{make_structured_matrix, sample_reset_pmf, ResetPmf};

    fn toy() -> Arm {
        Arm::new(
            make_structured_matrix(1, 0.5, 2).unwrap(),
            ResetPmf::point_mass(2, 0),
            default_cost(2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn step_info_rules() {
        assert_eq!(step_info(InfoState::A { k: 3 }, true, None, 10).unwrap(), InfoState::A { k: 0 });
        assert_eq!(
            step_info(InfoState::B { s: 1, k: 5 }, false, None, 40).unwrap(),
            InfoState::B { s: 1, k: 6 }
        );
        assert_eq!(step_info(InfoState::A { k: 7 }, false, None, 7).unwrap(), InfoState::A { k: 7 });
        assert_eq!(
            step_info(InfoState::B { s: 0, k: 2 }, true, Some(3), 7).unwrap(),
            InfoState::B { s: 3, k: 0 }
        );
        assert_eq!(
            step_info(InfoState::A { k: 0 }, true, Some(1), 5),
            Err(Error::UnexpectedRevealedState)
        );
        assert_eq!(
            step_info(InfoState::B { s: 0, k: 0 }, true, None, 5),
            Err(Error::MissingRevealedState)
        );
    }

    #[test]
    fn beliefs_of_toy_arm() {
        let arm = toy();
        assert_eq!(belief_of_info(&arm, InfoState::A { k: 0 }).unwrap().0, vec![1.0, 0.0]);
        assert_eq!(belief_of_info(&arm, InfoState::A { k: 2 }).unwrap().0, vec![0.25, 0.75]);
        assert_eq!(belief_of_info(&arm, InfoState::B { s: 1, k: 0 }).unwrap().0, vec![0.0, 1.0]);
        assert_eq!(expected_cost(&arm, InfoState::A { k: 0 }, false).unwrap(), 0.0);
        assert_eq!(expected_cost(&arm, InfoState::A { k: 1 }, false).unwrap(), 0.5);
        assert_eq!(expected_cost(&arm, InfoState::B { s: 0, k: 4 }, true).unwrap(), 2.0);
    }

    #[test]
    fn active_cost_is_constant_under_default_cost() {
        let arm = Arm::new(
            make_structured_matrix(3, 0.2, 5).unwrap(),
            sample_reset_pmf(5, 9).unwrap(),
            default_cost(5).unwrap(),
        )
        .unwrap();
        for k in 0..12 {
            let c = expected_cost(&arm, InfoState::A { k }, true).unwrap();
            assert!((c - 12.5).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_matches_direct_beliefs() {
        let arm = Arm::new(
            make_structured_matrix(2, 0.4, 4).unwrap(),
            sample_reset_pmf(4, 1).unwrap(),
            default_cost(4).unwrap(),
        )
        .unwrap();
        for model in [Model::A, Model::B] {
            let chain = InfoChain::new(&arm, model, 6).unwrap();
            for info in chain.states() {
                let direct = expected_cost(&arm, info, false).unwrap();
                let idx = chain.index_of(info).unwrap();
                assert!((chain.passive_costs()[idx] - direct).abs() < 1e-12);
                assert_eq!(chain.state(idx), info);
            }
        }
    }

    #[test]
    fn index_of_rejects_foreign_states() {
        let chain = InfoChain::new(&toy(), Model::A, 3).unwrap();
        assert!(chain.index_of(InfoState::A { k: 4 }).is_err());
        assert!(chain.index_of(InfoState::B { s: 0, k: 0 }).is_err());
    }

    #[test]
    fn discount_range() {
        assert!(Discount::new(0.0).is_err());
        assert!(Discount::new(1.0).is_err());
        assert!(Discount::new(0.99).is_ok());
    }
}
