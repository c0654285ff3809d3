//! Experiment driver: builds fleets per grid cell, runs the requested
//! policies and writes tables, per-cell results and provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use restart_bandit::dp::{joint_optimal_policy, JointOptions};
use restart_bandit::sim::{
    alpha_opt, eps_myp, simulate, structured_fleet, Fleet, MypPolicy, OptPolicy, Policy, SimConfig, SimResult,
    WipPolicy,
};
use restart_bandit::{Discount, IndexTable, Model};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, PolicyKind};
use crate::error::CliError;

pub const PROVENANCE_SCHEMA_VERSION: u32 = 1;

/// Sub-seed for a named purpose, derived from the base seed by hashing.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let digest = Sha256::digest(format!("{base}/{tag}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// The fleet of a cell depends on `(n, family)` only, so both models and
/// every budget see the same machines.
pub fn fleet_seed(base: u64, n: usize, family: u8) -> u64 {
    derive_seed(base, &format!("fleet/n{n}/family{family}"))
}

pub fn sim_seed(base: u64, model: Model, n: usize, m: usize, family: u8) -> u64 {
    derive_seed(base, &format!("sim/model{model}/n{n}/m{m}/family{family}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptSummary {
    pub joint_states: usize,
    pub iterations: usize,
    /// Value of the joint policy on the truncated chain at the initial state.
    pub model_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub model: Model,
    pub n: usize,
    pub m: usize,
    pub family: u8,
    pub fleet_seed: u64,
    pub sim_seed: u64,
    pub results: Vec<SimResult>,
    pub alpha_opt: Option<f64>,
    pub eps_myp: Option<f64>,
    pub opt: Option<OptSummary>,
    #[serde(skip)]
    pub seconds: f64,
}

impl CellReport {
    pub fn result(&self, policy: PolicyKind) -> Option<&SimResult> {
        let name = policy.to_string();
        self.results.iter().find(|r| r.policy == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
}

struct Group {
    model: Model,
    n: usize,
    family: u8,
}

fn run_group(cfg: &ExperimentConfig, g: &Group) -> Result<Vec<CellReport>, CliError> {
    let beta = Discount::new(cfg.beta)?;
    let fseed = fleet_seed(cfg.seed, g.n, g.family);
    // budget is irrelevant to the arms; reuse one fleet and its index tables
    let base = structured_fleet(g.n, 1, g.model, cfg.size, g.family, fseed)?;
    let chains = base.chains(cfg.cap)?;
    let tables = if cfg.policies.contains(&PolicyKind::Wip) {
        Some(chains.iter().map(|c| IndexTable::compute(c, beta)).collect::<Result<Vec<_>, _>>()?)
    } else {
        None
    };
    let mut cells = Vec::with_capacity(cfg.m.len());
    for &m in &cfg.m {
        let start = Instant::now();
        let fleet = Fleet::new(base.arms.clone(), m, g.model)?;
        let seed = sim_seed(cfg.seed, g.model, g.n, m, g.family);
        let sim = SimConfig { horizon: cfg.horizon, paths: cfg.paths, beta, seed, cap: cfg.cap };
        let mut results = Vec::new();
        let mut opt = None;
        for &kind in &cfg.policies {
            let policy: Box<dyn Policy> = match kind {
                PolicyKind::Wip => Box::new(WipPolicy::new(tables.as_deref().unwrap_or_default(), m, cfg.cap)),
                PolicyKind::Myp => Box::new(MypPolicy::new(&chains, m)),
                PolicyKind::Opt => {
                    let options = JointOptions {
                        max_states: cfg.max_joint_states,
                        actions: cfg.opt_actions.into(),
                        ..JointOptions::default()
                    };
                    let joint = joint_optimal_policy(&chains, m, beta, options)?;
                    opt = Some(OptSummary {
                        joint_states: joint.actions.len(),
                        iterations: joint.iterations,
                        model_value: joint.initial_value(&chains)?,
                    });
                    Box::new(OptPolicy::new(joint, cfg.cap))
                }
            };
            results.push(simulate(&fleet, policy.as_ref(), &sim)?);
        }
        let j = |k: PolicyKind| results.iter().find(|r| r.policy == k.to_string()).map(|r| r.j_hat);
        let alpha = match (j(PolicyKind::Opt), j(PolicyKind::Wip)) {
            (Some(o), Some(w)) => Some(alpha_opt(o, w)?),
            _ => None,
        };
        let eps = match (j(PolicyKind::Myp), j(PolicyKind::Wip)) {
            (Some(my), Some(w)) => Some(eps_myp(my, w)?),
            _ => None,
        };
        cells.push(CellReport {
            model: g.model,
            n: g.n,
            m,
            family: g.family,
            fleet_seed: fseed,
            sim_seed: seed,
            results,
            alpha_opt: alpha,
            eps_myp: eps,
            opt,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(cells)
}

/// Runs every cell of the grid. Cells are computed in parallel and
/// reported in grid order (model, n, family, m).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    cfg.validate()?;
    let mut groups = Vec::new();
    for &model in &cfg.models {
        for &n in &cfg.n {
            for &family in &cfg.families {
                groups.push(Group { model, n, family });
            }
        }
    }
    let cells = groups
        .par_iter()
        .map(|g| run_group(cfg, g))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(ExperimentReport {
        schema_version: PROVENANCE_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        cells,
    })
}

impl ExperimentReport {
    pub fn cell(&self, model: Model, n: usize, m: usize, family: u8) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.n == n && c.m == m && c.family == family)
    }

    /// One CSV per (metric, model, m): rows `n`, columns family.
    pub fn tables(&self) -> BTreeMap<String, String> {
        let cfg = &self.config;
        let mut metrics: Vec<(String, Box<dyn Fn(&CellReport) -> Option<f64>>)> = Vec::new();
        if cfg.policies.contains(&PolicyKind::Opt) && cfg.policies.contains(&PolicyKind::Wip) {
            metrics.push(("alpha_opt".into(), Box::new(|c: &CellReport| c.alpha_opt)));
        }
        if cfg.policies.contains(&PolicyKind::Myp) && cfg.policies.contains(&PolicyKind::Wip) {
            metrics.push(("eps_myp".into(), Box::new(|c: &CellReport| c.eps_myp)));
        }
        for &p in &cfg.policies {
            metrics.push((format!("J_{p}"), Box::new(move |c: &CellReport| c.result(p).map(|r| r.j_hat))));
        }
        let mut out = BTreeMap::new();
        for (name, get) in &metrics {
            for &model in &cfg.models {
                for &m in &cfg.m {
                    let mut csv = String::from("n");
                    for f in &cfg.families {
                        let _ = write!(csv, ",family_{f}");
                    }
                    csv.push('\n');
                    for &n in &cfg.n {
                        let _ = write!(csv, "{n}");
                        for &f in &cfg.families {
                            match self.cell(model, n, m, f).and_then(|c| get(c)) {
                                Some(v) => {
                                    let _ = write!(csv, ",{v:.4}");
                                }
                                None => csv.push(','),
                            }
                        }
                        csv.push('\n');
                    }
                    out.insert(format!("{name}_model{model}_m{m}.csv"), csv);
                }
            }
        }
        out
    }

    /// Every simulated policy of every cell, one row each.
    pub fn cells_csv(&self) -> String {
        let mut csv =
            String::from("model,n,m,family,policy,J_hat,std_err,paths,horizon,seed,fleet_seed,fingerprint,tail_bound\n");
        for c in &self.cells {
            for r in &c.results {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    c.model, c.n, c.m, c.family, r.policy, r.j_hat, r.std_err, r.paths, r.horizon, r.seed, c.fleet_seed,
                    r.fingerprint, r.tail_bound
                );
            }
        }
        csv
    }

    pub fn provenance_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn timings_json(&self) -> Result<String, CliError> {
        let cells: Vec<_> = self
            .cells
            .iter()
            .map(|c| {
                serde_json::json!({
                    "model": c.model, "n": c.n, "m": c.m, "family": c.family, "seconds": c.seconds
                })
            })
            .collect();
        Ok(serde_json::to_string_pretty(&serde_json::json!({ "cells": cells }))?)
    }

    /// Writes tables, `cells.csv`, `provenance.json` and `timings.json`.
    /// Everything except `timings.json` is a deterministic function of the
    /// configuration.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut files: Vec<(String, String)> = self.tables().into_iter().collect();
        files.push(("cells.csv".into(), self.cells_csv()));
        files.push(("provenance.json".into(), self.provenance_json()?));
        files.push(("timings.json".into(), self.timings_json()?));
        let mut names = Vec::with_capacity(files.len());
        for (name, body) in files {
            let path = dir.join(&name);
            fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
            names.push(name);
        }
        Ok(names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentId;

    fn tiny(policies: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(
            &format!("n = [3]\nm = [1]\nsize = 3\ncap = 2\nfamilies = [1, 2]\nhorizon = 50\npaths = 20\nbeta = 0.9\npolicies = {policies}"),
            ExperimentId::Custom,
        )
        .unwrap()
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_ne!(fleet_seed(1, 3, 1), fleet_seed(1, 3, 2));
        assert_ne!(sim_seed(1, Model::A, 3, 1, 1), sim_seed(1, Model::B, 3, 1, 1));
    }

    #[test]
    fn single_policy_has_no_ratios() {
        let report = run_experiment(&tiny("[\"wip\"]")).unwrap();
        assert_eq!(report.cells.len(), 4);
        assert!(report.cells.iter().all(|c| c.alpha_opt.is_none() && c.eps_myp.is_none()));
        let tables = report.tables();
        assert_eq!(
            tables.keys().cloned().collect::<Vec<_>>(),
            vec!["J_wip_modelA_m1.csv", "J_wip_modelB_m1.csv"]
        );
        assert!(tables["J_wip_modelA_m1.csv"].starts_with("n,family_1,family_2\n3,"));
    }

    #[test]
    fn ratios_present_when_policies_pair() {
        let report = run_experiment(&tiny("[\"wip\", \"myp\", \"opt\"]")).unwrap();
        for c in &report.cells {
            assert!(c.alpha_opt.is_some() && c.eps_myp.is_some());
            assert_eq!(c.results.len(), 3);
        }
        let a = report.cell(Model::A, 3, 1, 1).unwrap();
        let b = report.cell(Model::B, 3, 1, 1).unwrap();
        assert_eq!(a.fleet_seed, b.fleet_seed);
        assert_ne!(a.sim_seed, b.sim_seed);
    }
}
