//! Single-arm utilities behind the `index` and `eval` subcommands.

use std::fs;
use std::path::Path;

use restart_bandit::policy_eval::dn_values;
use restart_bandit::{
    default_cost, make_structured_matrix, sample_reset_pmf, Arm, Discount, IndexTable, InfoChain, Model,
    PolicyValue, ThresholdPolicy,
};

use crate::error::CliError;

/// Where the arm comes from: a JSON document or a structured family.
#[derive(Debug, Clone, PartialEq)]
pub enum ArmSource {
    File(std::path::PathBuf),
    Structured { family: u8, p: f64, size: usize, reset_seed: u64 },
}

pub fn load_arm(source: &ArmSource) -> Result<Arm, CliError> {
    match source {
        ArmSource::File(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Ok(Arm::from_json(&text)?)
        }
        ArmSource::Structured { family, p, size, reset_seed } => Ok(Arm::new(
            make_structured_matrix(*family, *p, *size)?,
            sample_reset_pmf(*size, *reset_seed)?,
            default_cost(*size)?,
        )?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Whittle index table of one arm.
pub fn index_table(arm: &Arm, model: Model, cap: usize, beta: f64) -> Result<IndexTable, CliError> {
    let chain = InfoChain::new(arm, model, cap)?;
    Ok(IndexTable::compute(&chain, Discount::new(beta)?)?)
}

pub fn render_index(table: &IndexTable, format: Format) -> Result<String, CliError> {
    Ok(match format {
        Format::Csv => table.to_csv(),
        Format::Json => serde_json::to_string_pretty(table)?,
    })
}

/// Parses `"3"` or `"1,2,4"` into a threshold policy for `model`.
pub fn parse_thresholds(text: &str, model: Model) -> Result<ThresholdPolicy, CliError> {
    let values = text
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("bad threshold list `{text}`: {e}")))?;
    match (model, values.as_slice()) {
        (Model::A, [t]) => Ok(ThresholdPolicy::a(*t)),
        (Model::A, _) => Err(CliError::Config("model A takes a single threshold".into())),
        (Model::B, _) => Ok(ThresholdPolicy::b(values)),
    }
}

/// D/N tables of a threshold policy.
pub fn evaluate(arm: &Arm, model: Model, cap: usize, beta: f64, policy: &ThresholdPolicy) -> Result<PolicyValue, CliError> {
    let chain = InfoChain::new(arm, model, cap)?;
    Ok(dn_values(&chain, policy, Discount::new(beta)?)?)
}

pub fn write_or_print(out: Option<&Path>, body: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            fs::write(path, body).map_err(|e| CliError::io(path, e))
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_parse() {
        assert_eq!(parse_thresholds("3", Model::A).unwrap(), ThresholdPolicy::a(3));
        assert_eq!(parse_thresholds("1, 2,4", Model::B).unwrap(), ThresholdPolicy::b(vec![1, 2, 4]));
        assert!(parse_thresholds("1,2", Model::A).is_err());
        assert!(parse_thresholds("x", Model::B).is_err());
    }

    #[test]
    fn structured_arm_index_csv() {
        let arm = load_arm(&ArmSource::Structured { family: 1, p: 0.3, size: 3, reset_seed: 1 }).unwrap();
        let t = index_table(&arm, Model::B, 4, 0.9).unwrap();
        let csv = render_index(&t, Format::Csv).unwrap();
        assert!(csv.starts_with("s,k,w\n"));
        assert_eq!(csv.lines().count(), 1 + 3 * 5);
    }
}
