//! Declarative experiment configuration (TOML).
//!
//! Every key is optional; missing keys take the defaults of the named
//! experiment, so an empty document describes `exp1`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use restart_bandit::dp::ActionSet;
use restart_bandit::Model;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Custom,
}

impl FromStr for ExperimentId {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "exp1" => Ok(ExperimentId::Exp1),
            "exp2" => Ok(ExperimentId::Exp2),
            "custom" => Ok(ExperimentId::Custom),
            other => Err(CliError::Config(format!("unknown experiment `{other}` (exp1, exp2, custom)"))),
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentId::Exp1 => "exp1",
            ExperimentId::Exp2 => "exp2",
            ExperimentId::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Wip,
    Myp,
    Opt,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Wip => "wip",
            PolicyKind::Myp => "myp",
            PolicyKind::Opt => "opt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptActions {
    AtMost,
    Exactly,
}

impl From<OptActions> for ActionSet {
    fn from(a: OptActions) -> Self {
        match a {
            OptActions::AtMost => ActionSet::AtMost,
            OptActions::Exactly => ActionSet::Exactly,
        }
    }
}

/// Raw document as written by the user.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<ExperimentId>,
    models: Option<Vec<Model>>,
    n: Option<Vec<usize>>,
    m: Option<Vec<usize>>,
    size: Option<usize>,
    cap: Option<usize>,
    families: Option<Vec<u8>>,
    beta: Option<f64>,
    horizon: Option<usize>,
    paths: Option<usize>,
    seed: Option<u64>,
    policies: Option<Vec<PolicyKind>>,
    out: Option<PathBuf>,
    opt_actions: Option<OptActions>,
    max_joint_states: Option<usize>,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub models: Vec<Model>,
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    /// Number of arm states `|X|`.
    pub size: usize,
    /// Truncation level `ℓ` (the chain has `ℓ + 1` information levels).
    pub cap: usize,
    pub families: Vec<u8>,
    pub beta: f64,
    pub horizon: usize,
    pub paths: usize,
    pub seed: u64,
    pub policies: Vec<PolicyKind>,
    pub out: PathBuf,
    pub opt_actions: OptActions,
    pub max_joint_states: usize,
}

impl ExperimentConfig {
    pub fn defaults(id: ExperimentId) -> Self {
        let base = ExperimentConfig {
            experiment: id,
            models: vec![Model::A, Model::B],
            n: vec![3],
            m: vec![1],
            size: 4,
            cap: 3,
            families: vec![1, 2, 3, 4],
            beta: 0.99,
            horizon: 1000,
            paths: 5000,
            seed: 2024,
            policies: vec![PolicyKind::Wip, PolicyKind::Opt],
            out: PathBuf::from(format!("out/{id}")),
            opt_actions: OptActions::AtMost,
            max_joint_states: 1_000_000,
        };
        match id {
            ExperimentId::Exp1 => base,
            ExperimentId::Exp2 => ExperimentConfig {
                n: vec![20, 40, 60],
                m: vec![1, 5],
                size: 20,
                cap: 39,
                policies: vec![PolicyKind::Wip, PolicyKind::Myp],
                ..base
            },
            ExperimentId::Custom => ExperimentConfig { policies: vec![PolicyKind::Wip], ..base },
        }
    }

    /// Parses a TOML document; `fallback` names the experiment when the
    /// document does not.
    pub fn from_toml(text: &str, fallback: ExperimentId) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let d = ExperimentConfig::defaults(raw.experiment.unwrap_or(fallback));
        let mut policies = raw.policies.unwrap_or(d.policies);
        policies.sort();
        policies.dedup();
        let cfg = ExperimentConfig {
            experiment: d.experiment,
            models: raw.models.unwrap_or(d.models),
            n: raw.n.unwrap_or(d.n),
            m: raw.m.unwrap_or(d.m),
            size: raw.size.unwrap_or(d.size),
            cap: raw.cap.unwrap_or(d.cap),
            families: raw.families.unwrap_or(d.families),
            beta: raw.beta.unwrap_or(d.beta),
            horizon: raw.horizon.unwrap_or(d.horizon),
            paths: raw.paths.unwrap_or(d.paths),
            seed: raw.seed.unwrap_or(d.seed),
            policies,
            out: raw.out.unwrap_or(d.out),
            opt_actions: raw.opt_actions.unwrap_or(d.opt_actions),
            max_joint_states: raw.max_joint_states.unwrap_or(d.max_joint_states),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Joint information states of the largest fleet for `model`.
    pub fn joint_states(&self, model: Model) -> f64 {
        let rows = match model {
            Model::A => 1,
            Model::B => self.size,
        };
        let per_arm = (rows * (self.cap + 1)) as f64;
        self.n.iter().map(|&n| per_arm.powi(n as i32)).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.models.is_empty() || self.n.is_empty() || self.m.is_empty() || self.families.is_empty() {
            return bad("models, n, m and families must be non-empty".into());
        }
        if self.policies.is_empty() {
            return bad("at least one policy is required".into());
        }
        for &n in &self.n {
            for &m in &self.m {
                if m == 0 || m >= n {
                    return bad(format!("need 1 <= m < n, got n = {n}, m = {m}"));
                }
            }
        }
        if self.size < 2 {
            return bad(format!("size must be at least 2, got {}", self.size));
        }
        if self.cap < 1 {
            return bad("cap (ℓ) must be at least 1".into());
        }
        if let Some(f) = self.families.iter().find(|f| !(1..=4).contains(*f)) {
            return bad(format!("matrix family {f} is not one of 1..4"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if self.horizon == 0 || self.paths == 0 {
            return bad("horizon and paths must be positive".into());
        }
        if self.policies.contains(&PolicyKind::Opt) {
            for &model in &self.models {
                let states = self.joint_states(model);
                if states > self.max_joint_states as f64 {
                    return bad(format!(
                        "opt needs a joint chain of {states:.0} states for model {model}, above the cap of {}",
                        self.max_joint_states
                    ));
                }
            }
            if self.n.iter().any(|&n| n > 63) {
                return bad("opt supports at most 63 arms".into());
            }
        }
        Ok(())
    }
}
