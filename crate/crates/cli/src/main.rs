use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use restart_bandit::Model;
use restart_bandit_cli::commands::{self, ArmSource, Format};
use restart_bandit_cli::config::{ExperimentConfig, ExperimentId};
use restart_bandit_cli::experiment::run_experiment;
use restart_bandit_cli::verify::{run_verify, Suite, VerifyOptions};
use restart_bandit_cli::CliError;

#[derive(Parser, Debug)]
#[command(name = "rbandit", version, about = "Whittle indices and scheduling experiments for restart bandits")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (run) or file (verify, index, eval).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Monte Carlo paths; overrides the configuration.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Simulation horizon; overrides the configuration.
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment grid and write its tables.
    Run {
        /// exp1, exp2 or custom; defaults to the configuration's value or exp1.
        experiment: Option<String>,
    },
    /// Run property suites against the oracles.
    Verify {
        /// Suites to run (repeatable); all when omitted.
        #[arg(long = "suite")]
        suites: Vec<String>,
        /// Random arms per model.
        #[arg(long, default_value_t = 50)]
        arms: usize,
        /// Perturb one computed index to check that the suite catches it.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Print the Whittle index table of one arm.
    Index {
        #[command(flatten)]
        arm: ArmArgs,
        #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
        format: OutFormat,
    },
    /// Print the D/N tables of a threshold policy on one arm.
    Eval {
        #[command(flatten)]
        arm: ArmArgs,
        /// Threshold (model A) or comma-separated per-row thresholds (model B).
        #[arg(long)]
        theta: String,
    },
}

#[derive(Args, Debug)]
struct ArmArgs {
    /// Arm document (JSON); otherwise the arm is built from a structured family.
    #[arg(long)]
    arm: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    family: u8,
    #[arg(long, default_value_t = 0.3)]
    p: f64,
    #[arg(long, default_value_t = 4)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    reset_seed: u64,
    #[arg(long, default_value = "A")]
    model: Model,
    /// Truncation level ℓ.
    #[arg(long, default_value_t = 10)]
    cap: usize,
    #[arg(long, default_value_t = 0.99)]
    beta: f64,
}

impl ArmArgs {
    fn source(&self) -> ArmSource {
        match &self.arm {
            Some(path) => ArmSource::File(path.clone()),
            None => ArmSource::Structured { family: self.family, p: self.p, size: self.size, reset_seed: self.reset_seed },
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OutFormat {
    Csv,
    Json,
}

/// Completed without error; `false` means a property check failed.
fn dispatch(cli: Cli) -> Result<bool, CliError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Run { experiment } => {
            let fallback = match &experiment {
                Some(id) => id.parse()?,
                None => ExperimentId::Exp1,
            };
            let text = match &cli.config {
                Some(path) => fs::read_to_string(path).map_err(|e| CliError::io(path, e))?,
                None => String::new(),
            };
            let mut cfg = ExperimentConfig::from_toml(&text, fallback)?;
            if let Some(id) = experiment {
                let id: ExperimentId = id.parse()?;
                if id != cfg.experiment {
                    return Err(CliError::Config(format!(
                        "command line names {id} but the configuration is {}",
                        cfg.experiment
                    )));
                }
            }
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(paths) = cli.paths {
                cfg.paths = paths;
            }
            if let Some(horizon) = cli.horizon {
                cfg.horizon = horizon;
            }
            if let Some(out) = cli.out {
                cfg.out = out;
            }
            cfg.validate()?;
            let report = run_experiment(&cfg)?;
            let files = report.write(&cfg.out)?;
            eprintln!("wrote {} files to {}", files.len(), cfg.out.display());
            Ok(true)
        }
        Command::Verify { suites, arms, inject_fault } => {
            let suites = if suites.is_empty() {
                Suite::ALL.to_vec()
            } else {
                suites.iter().map(|s| s.parse()).collect::<Result<Vec<Suite>, _>>()?
            };
            let opts = VerifyOptions {
                arms_per_model: arms,
                seed: cli.seed.unwrap_or(VerifyOptions::default().seed),
                inject_fault,
                ..VerifyOptions::default()
            };
            let report = run_verify(&suites, &opts)?;
            for s in &report.suites {
                eprintln!("{}", s.summary());
                for e in &s.examples {
                    eprintln!("    {e}");
                }
            }
            commands::write_or_print(cli.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
            Ok(report.passed())
        }
        Command::Index { arm, format } => {
            let a = commands::load_arm(&arm.source())?;
            let table = commands::index_table(&a, arm.model, arm.cap, arm.beta)?;
            let format = match format {
                OutFormat::Csv => Format::Csv,
                OutFormat::Json => Format::Json,
            };
            commands::write_or_print(cli.out.as_deref(), &commands::render_index(&table, format)?)?;
            Ok(true)
        }
        Command::Eval { arm, theta } => {
            let a = commands::load_arm(&arm.source())?;
            let policy = commands::parse_thresholds(&theta, arm.model)?;
            let value = commands::evaluate(&a, arm.model, arm.cap, arm.beta, &policy)?;
            commands::write_or_print(cli.out.as_deref(), &value.to_csv())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
