//! Acceptance criteria, one `[PASS]`/`[FAIL]` line each. Runs as a plain
//! binary so the report is always printed; exits nonzero if any criterion
//! fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use restart_bandit::Model;
use restart_bandit_cli::config::{ExperimentConfig, ExperimentId, PolicyKind};
use restart_bandit_cli::experiment::{run_experiment, ExperimentReport};
use restart_bandit_cli::verify::{
    check_closed_form, check_hand_values, check_index_oracle, check_structure, check_truncation, corpus, CheckReport,
};
use restart_bandit_cli::CliError;

const CORPUS_SEED: u64 = 20240;
const EXP1_SEEDS: [u64; 5] = [11, 23, 37, 41, 59];
const EXP2_SEED: u64 = 2024;

struct Outcome {
    id: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
}

fn from_check(id: &'static str, check: Result<CheckReport, CliError>, start: Instant) -> Outcome {
    match check {
        Ok(r) => Outcome { id, passed: r.passed(), detail: r.summary(), seconds: start.elapsed().as_secs_f64() },
        Err(e) => Outcome { id, passed: false, detail: format!("error: {e}"), seconds: start.elapsed().as_secs_f64() },
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let check = corpus(50, CORPUS_SEED).and_then(|c| {
        let per_model = |m: Model| c.iter().filter(|a| a.model == m).count();
        assert!(per_model(Model::A) >= 50 && per_model(Model::B) >= 50);
        check_index_oracle(&c, 1e-6, false)
    });
    from_check("1 index-oracle agreement (50 arms per model, 1e-6)", check, start)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let check = corpus(50, CORPUS_SEED).and_then(|c| check_closed_form(&c, 1e-8, CORPUS_SEED));
    from_check("2 closed-form D/N vs finite horizon (1e-8)", check, start)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    from_check("3 hand-derived values (1e-12)", check_hand_values(1e-12), start)
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let check =
        corpus(20, CORPUS_SEED).and_then(|c| check_truncation(&c, &[5, 10, 20], 200, &[-5.0, 0.0, 5.0]));
    from_check("4 truncation bound (ℓ in 5, 10, 20 vs 200)", check, start)
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let check = corpus(50, CORPUS_SEED).and_then(|c| check_structure(&c, 50, 1e-9));
    from_check("5 structure properties (50-point λ grid)", check, start)
}

fn exp1_config(seed: u64, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ExperimentId::Exp1);
    cfg.seed = seed;
    cfg.out = out.to_path_buf();
    cfg
}

fn criterion_6(first: &mut Option<ExperimentReport>) -> Outcome {
    let start = Instant::now();
    let mut cells = 0;
    let mut alpha_low = Vec::new();
    let mut opt_worse = Vec::new();
    let mut min_alpha = f64::INFINITY;
    let mut max_alpha = f64::NEG_INFINITY;
    for seed in EXP1_SEEDS {
        let report = match run_experiment(&exp1_config(seed, Path::new("unused"))) {
            Ok(r) => r,
            Err(e) => {
                return Outcome { id: "6 experiment 1", passed: false, detail: format!("error: {e}"), seconds: 0.0 }
            }
        };
        for c in &report.cells {
            cells += 1;
            let alpha = c.alpha_opt.unwrap_or(f64::NAN);
            min_alpha = min_alpha.min(alpha);
            max_alpha = max_alpha.max(alpha);
            let tag = format!("seed {seed} model {} family {}", c.model, c.family);
            if !(alpha >= 99.0) {
                alpha_low.push(format!("{tag}: α = {alpha:.2}"));
            }
            let (o, w) = (c.result(PolicyKind::Opt).unwrap(), c.result(PolicyKind::Wip).unwrap());
            let se = (o.std_err * o.std_err + w.std_err * w.std_err).sqrt();
            if o.j_hat > w.j_hat + 3.0 * se {
                opt_worse.push(format!("{tag}: J(opt) = {:.3}, J(wip) = {:.3}, 3σ = {:.3}", o.j_hat, w.j_hat, 3.0 * se));
            }
        }
        if first.is_none() {
            *first = Some(report);
        }
    }
    let mut detail = format!(
        "{cells} cells over {} seeds; α range [{min_alpha:.2}, {max_alpha:.2}]; {} cells with α < 99; {} cells with J(opt) > J(wip) + 3σ",
        EXP1_SEEDS.len(),
        alpha_low.len(),
        opt_worse.len()
    );
    for line in alpha_low.iter().chain(&opt_worse) {
        detail.push_str("\n        ");
        detail.push_str(line);
    }
    Outcome {
        id: "6 experiment 1 (α_opt ≥ 99, J(opt) ≤ J(wip) + 3σ)",
        passed: cells == 8 * EXP1_SEEDS.len() && alpha_low.is_empty() && opt_worse.is_empty(),
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::defaults(ExperimentId::Exp2);
    cfg.n = vec![20, 40];
    cfg.paths = 500;
    cfg.seed = EXP2_SEED;
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return Outcome { id: "7 experiment 2", passed: false, detail: format!("error: {e}"), seconds: 0.0 },
    };
    let eps: Vec<f64> = report.cells.iter().map(|c| c.eps_myp.unwrap_or(f64::NAN)).collect();
    let positive_in = |model: Model| {
        report.cells.iter().filter(|c| c.model == model && c.eps_myp.is_some_and(|e| e > 0.0)).count()
    };
    let (pos_a, pos_b) = (positive_in(Model::A), positive_in(Model::B));
    let mut b_wins = 0;
    let mut pairs = 0;
    for &n in &cfg.n {
        for &f in &cfg.families {
            let a = report.cell(Model::A, n, 1, f).and_then(|c| c.eps_myp);
            let b = report.cell(Model::B, n, 1, f).and_then(|c| c.eps_myp);
            if let (Some(a), Some(b)) = (a, b) {
                pairs += 1;
                if b > a {
                    b_wins += 1;
                }
            }
        }
    }
    let min = eps.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Outcome {
        id: "7 experiment 2 reduced grid (ε_myp > 0, model B above model A at m = 1)",
        passed: eps.len() == 32 && pos_a >= 15 && pos_b >= 15 && pairs == 8 && 2 * b_wins > pairs,
        detail: format!(
            "ε_myp > 0 in {pos_a} of 16 model A cells and {pos_b} of 16 model B cells (range [{min:.2}, {max:.2}]); model B above model A in {b_wins} of {pairs} m = 1 cells"
        ),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn deterministic_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timings.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn criterion_8(first: Option<ExperimentReport>) -> Outcome {
    let start = Instant::now();
    let id = "8 byte-identical rerun";
    let Some(first) = first else {
        return Outcome { id, passed: false, detail: "no first run available".into(), seconds: 0.0 };
    };
    let dirs = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let rerun = run_experiment(&first.config).unwrap();
    first.write(dirs.0.path()).unwrap();
    rerun.write(dirs.1.path()).unwrap();
    let (a, b) = (deterministic_files(dirs.0.path()), deterministic_files(dirs.1.path()));
    let differing: Vec<&str> =
        a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    Outcome {
        id,
        passed: a.len() == b.len() && !a.is_empty() && differing.is_empty(),
        detail: format!(
            "experiment 1, seed {}: {} output files compared (timings excluded), {} differ {:?}",
            first.config.seed,
            a.len(),
            differing.len(),
            differing
        ),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn main() -> ExitCode {
    let mut first_exp1 = None;
    let outcomes = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(&mut first_exp1),
        criterion_7(),
        criterion_8(first_exp1),
    ];
    println!("\nacceptance criteria");
    for o in &outcomes {
        println!("[{}] criterion {} ({:.1} s)\n    {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.seconds, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("\n{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
