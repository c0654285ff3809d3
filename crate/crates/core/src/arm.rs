//! A single restart bandit: deterioration matrix, reset distribution and
//! two-action cost table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{ResetPmf, StochasticMatrix};

/// Per-state costs of the passive (`φ`) and active (`ρ`) actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub passive: Vec<f64>,
    pub active: Vec<f64>,
}

impl CostSpec {
    pub fn new(passive: Vec<f64>, active: Vec<f64>) -> Result<Self> {
        if passive.len() != active.len() {
            return Err(Error::InvalidCost(format!(
                "passive has {} states, active has {}",
                passive.len(),
                active.len()
            )));
        }
        if let Some(v) = passive.iter().chain(&active).find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidCost(format!("cost {v} is not a finite nonnegative value")));
        }
        Ok(CostSpec { passive, active })
    }

    pub fn len(&self) -> usize {
        self.passive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passive.is_empty()
    }

    pub fn cost(&self, state: usize, active: bool) -> f64 {
        if active {
            self.active[state]
        } else {
            self.passive[state]
        }
    }

    pub fn max_cost(&self) -> f64 {
        self.passive.iter().chain(&self.active).copied().fold(0.0, f64::max)
    }

    pub fn min_cost(&self) -> f64 {
        self.passive
            .iter()
            .chain(&self.active)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_nondecreasing(&self) -> bool {
        nondecreasing(&self.passive) && nondecreasing(&self.active)
    }

    /// `ρ(x) - φ(x)` nonincreasing in `x`.
    pub fn is_submodular(&self) -> bool {
        let gap: Vec<f64> = self.active.iter().zip(&self.passive).map(|(a, p)| a - p).collect();
        gap.windows(2).all(|w| w[1] <= w[0] + 1e-12)
    }
}

fn nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0] - 1e-12)
}

/// Passive cost `(x-1)^2` and constant active cost `|X|^2 / 2`, states `x = 1..=|X|`.
pub fn default_cost(size: usize) -> Result<CostSpec> {
    if size < 2 {
        return Err(Error::SizeTooSmall(size));
    }
    let passive = (0..size).map(|i| (i * i) as f64).collect();
    let active = vec![0.5 * (size * size) as f64; size];
    CostSpec::new(passive, active)
}

/// A restart arm. State `x` in the model is stored at index `x - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArmDocument", into = "ArmDocument")]
pub struct Arm {
    transition: StochasticMatrix,
    reset: ResetPmf,
    cost: CostSpec,
}

impl Arm {
    pub fn new(transition: StochasticMatrix, reset: ResetPmf, cost: CostSpec) -> Result<Self> {
        let n = transition.size();
        if n < 2 {
            return Err(Error::SizeTooSmall(n));
        }
        if reset.len() != n || cost.len() != n {
            return Err(Error::Dimension(format!(
                "P is {n}x{n}, Q has {} entries, costs have {}",
                reset.len(),
                cost.len()
            )));
        }
        Ok(Arm { transition, reset, cost })
    }

    pub fn size(&self) -> usize {
        self.transition.size()
    }

    pub fn transition(&self) -> &StochasticMatrix {
        &self.transition
    }

    pub fn reset(&self) -> &ResetPmf {
        &self.reset
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn with_cost(&self, cost: CostSpec) -> Result<Arm> {
        Arm::new(self.transition.clone(), self.reset.clone(), cost)
    }

    pub fn with_reset(&self, reset: ResetPmf) -> Result<Arm> {
        Arm::new(self.transition.clone(), reset, self.cost.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Arm> {
        serde_json::from_str(s).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate_assumptions(&self) -> AssumptionReport {
        AssumptionReport {
            monotone_transition: self.transition.is_stochastically_monotone(),
            dominates_identity: self.transition.dominates_identity(),
            costs_nondecreasing: self.cost.is_nondecreasing(),
            cost_submodular: self.cost.is_submodular(),
        }
    }
}

/// On-disk JSON layout of an [`Arm`].
#[derive(Serialize, Deserialize)]
struct ArmDocument {
    size: usize,
    #[serde(rename = "P")]
    transition: Vec<f64>,
    #[serde(rename = "Q")]
    reset: Vec<f64>,
    cost_passive: Vec<f64>,
    cost_active: Vec<f64>,
}

impl TryFrom<ArmDocument> for Arm {
    type Error = Error;
    fn try_from(doc: ArmDocument) -> Result<Arm> {
        Arm::new(
            StochasticMatrix::from_row_major(doc.size, doc.transition)?,
            ResetPmf::new(doc.reset)?,
            CostSpec::new(doc.cost_passive, doc.cost_active)?,
        )
    }
}

impl From<Arm> for ArmDocument {
    fn from(arm: Arm) -> Self {
        ArmDocument {
            size: arm.size(),
            transition: arm.transition.entries().to_vec(),
            reset: arm.reset.probabilities().to_vec(),
            cost_passive: arm.cost.passive,
            cost_active: arm.cost.active,
        }
    }
}

/// Structural conditions under which threshold policies are optimal and
/// the arm is indexable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub monotone_transition: bool,
    pub dominates_identity: bool,
    pub costs_nondecreasing: bool,
    pub cost_submodular: bool,
}

impl AssumptionReport {
    /// Cost conditions only.
    pub fn cost_ok(&self) -> bool {
        self.costs_nondecreasing && self.cost_submodular
    }

    pub fn all(&self) -> bool {
        self.monotone_transition && self.dominates_identity && self.cost_ok()
    }
}
