//! End-to-end runs of the `rbandit` binary: outputs and exit codes.

use std::fs;
use std::process::{Command, Output};

fn rbandit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbandit")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn custom_run_writes_tables_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    fs::write(
        &config,
        "experiment = \"custom\"\nmodels = [\"A\", \"B\"]\nn = [3]\nm = [1]\nsize = 3\ncap = 3\nfamilies = [1, 2]\n\
         beta = 0.9\npolicies = [\"wip\", \"myp\", \"opt\"]\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let args = [
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--paths",
        "40",
        "--horizon",
        "60",
        "--seed",
        "3",
        "--threads",
        "2",
    ];
    let out = rbandit(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["cells.csv", "provenance.json", "timings.json", "alpha_opt_modelA_m1.csv", "eps_myp_modelB_m1.csv"] {
        assert!(out_dir.join(name).is_file(), "missing {name}");
    }
    let cells = fs::read_to_string(out_dir.join("cells.csv")).unwrap();
    assert!(cells.starts_with("model,n,m,family,policy,J_hat,std_err,"));
    // 2 models, 2 families, 3 policies
    assert_eq!(cells.lines().count(), 1 + 12);
    let provenance: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(provenance["schema_version"], 1);
    assert_eq!(provenance["config"]["seed"], 3);

    let again = dir.path().join("again");
    let mut rerun = args.to_vec();
    rerun[4] = again.to_str().unwrap();
    assert_eq!(code(&rbandit(&rerun)), 0);
    assert_eq!(cells, fs::read_to_string(again.join("cells.csv")).unwrap());
}

#[test]
fn hand_values_suite_passes() {
    let out = rbandit(&["verify", "--suite", "hand-values"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[PASS] hand-values"));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["suites"].is_array());
}

#[test]
fn injected_fault_is_detected() {
    let out = rbandit(&["verify", "--suite", "index-oracle", "--arms", "3", "--inject-fault"]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[FAIL] index-oracle"));
}

#[test]
fn index_oracle_passes_without_fault() {
    let out = rbandit(&["verify", "--suite", "index-oracle", "--arms", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "experiment = \"custom\"\nbeta = 1.5\n").unwrap();
    assert_eq!(code(&rbandit(&["run", "--config", bad.to_str().unwrap(), "--paths", "2"])), 2);
    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "no_such_key = 1\n").unwrap();
    assert_eq!(code(&rbandit(&["run", "--config", unknown.to_str().unwrap()])), 2);
    assert_eq!(code(&rbandit(&["verify", "--suite", "nonsense"])), 2);
    assert_eq!(code(&rbandit(&["eval", "--theta", "x"])), 2);
    assert_eq!(code(&rbandit(&["index", "--beta", "1.0"])), 2);
}

#[test]
fn index_and_eval_print_tables() {
    let out = rbandit(&["index", "--model", "B", "--size", "3", "--cap", "4", "--beta", "0.9"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    // header plus 3 rows of 5 information levels
    assert_eq!(text.lines().count(), 1 + 15);

    let json = rbandit(&["index", "--cap", "4", "--format", "json"]);
    assert_eq!(code(&json), 0);
    serde_json::from_slice::<serde_json::Value>(&json.stdout).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("dn.csv");
    let out = rbandit(&["eval", "--cap", "4", "--theta", "2", "--out", file.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&file).unwrap().lines().count(), 1 + 5);
}
