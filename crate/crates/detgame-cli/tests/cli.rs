//! End-to-end checks of the binary: every test spawns the real executable
//! exactly the way a user would run it and inspects status, stdout, stderr.

use std::path::PathBuf;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};

static STAMP: AtomicUsize = AtomicUsize::new(0);

fn write_config(body: &str) -> PathBuf {
    let stamp = STAMP.fetch_add(1, Ordering::Relaxed);
    let path = std::env::temp_dir().join(format!(
        "detgame-cli-test-{}-{stamp}.json",
        std::process::id()
    ));
    std::fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detgame"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let out = run(&["kl", "--config", "/nonexistent/detgame.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
    assert!(out.stdout.is_empty());
}

#[test]
fn unknown_config_keys_are_refused() {
    let cfg = write_config(r#"{"p0": [0.5, 0.5], "p1": [0.5, 0.5], "typo": 1}"#);
    let out = run(&["kl", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo"));
}

#[test]
fn blown_enumeration_budget_exits_3() {
    // Powers strictly between 1 and 2 give costs with no small common
    // denominator, so class counting has to enumerate, and this input has
    // far more admissible classes than the enumeration budget.
    let x: Vec<String> = (0..2000).map(|i| (i % 3).to_string()).collect();
    let cfg = write_config(&format!(
        r#"{{"p0": [0.4, 0.3, 0.3], "distortion": {{"kind": "lp_power", "p": 1.5}},
            "delta0": 1.0, "x": [{}], "trials": 1}}"#,
        x.join(", ")
    ));
    let out = run(&["attack-sample", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("resource budget"));
    assert!(out.stdout.is_empty());
}

#[test]
fn np_exponent_matches_a_grid_oracle() {
    let cfg = write_config(
        r#"{"game": "np", "p0": [0.9, 0.1], "p1": [0.1, 0.9],
            "distortion": {"kind": "hamming"}, "delta0": 0.1, "delta1": 0.1,
            "lambda": 0.01}"#,
    );
    let doc = stdout_json(&run(&["np-exponent", "--config", cfg.to_str().unwrap()]));
    let value = doc["result"]["value"].as_f64().unwrap();
    // Pinned by an exhaustive 1e-7-step line search over binary output laws.
    assert!((value - 0.90038702393501824).abs() < 1e-4, "{value}");
}

#[test]
fn flag_overrides_reach_the_computation_and_the_echo() {
    let cfg = write_config(
        r#"{"game": "np", "p0": [0.8, 0.2], "p1": [0.3, 0.7],
            "distortion": {"kind": "hamming"}, "delta0": 0, "delta1": 0,
            "lambda": 0.4}"#,
    );
    let out = run(&[
        "np-exponent",
        "--config",
        cfg.to_str().unwrap(),
        "--lambda",
        "0",
    ]);
    let doc = stdout_json(&out);
    // With both budgets at zero and no floor, the exponent is the plain
    // divergence between the sources.
    let p0 = detgame::Pmf::new(vec![0.8, 0.2]).unwrap();
    let p1 = detgame::Pmf::new(vec![0.3, 0.7]).unwrap();
    let want = detgame::kl_divergence(&p0, &p1).unwrap();
    let value = doc["result"]["value"].as_f64().unwrap();
    assert!((value - want).abs() < 1e-6, "{value} vs {want}");
    assert_eq!(doc["config_echo"]["lambda"], "0.0000000000000000e0");
}

#[test]
fn the_config_echo_reproduces_the_run() {
    let cfg = write_config(
        r#"{"game": "np", "p0": [0.6, 0.4], "p1": [0.2, 0.8],
            "distortion": {"kind": "lp_power", "p": 2},
            "delta0": 0.05, "delta1": 0.1, "lambda": 0.02}"#,
    );
    let first = run(&["np-exponent", "--config", cfg.to_str().unwrap()]);
    let doc = stdout_json(&first);
    let echo = serde_json::to_string(&doc["config_echo"]).unwrap();
    let cfg2 = write_config(&echo);
    let second = run(&["np-exponent", "--config", cfg2.to_str().unwrap()]);
    assert!(second.status.success());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn csv_is_refused_where_there_is_no_table() {
    let cfg = write_config(r#"{"p0": [0.5, 0.5], "p1": [0.4, 0.6]}"#);
    let out = run(&["kl", "--config", cfg.to_str().unwrap(), "--output", "csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("csv"));
}

#[test]
fn zero_budget_sweep_admits_only_the_source_itself() {
    let cfg = write_config(
        r#"{"p0": [0.5, 0.5], "distortion": {"kind": "hamming"},
            "delta0": 0, "delta1": 0, "grid_step": 0.1, "output": "csv"}"#,
    );
    let out = run(&["region-sweep", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "p0,p1,member,inner_value,emd");
    assert_eq!(lines.len(), 12);
    let members: Vec<_> = lines[1..].iter().filter(|l| l.contains(",true,")).collect();
    assert_eq!(members.len(), 1);
    assert!(members[0].starts_with("5.0000000000000000e-1,5.0000000000000000e-1,"));
}

#[test]
fn transport_between_equal_sources_is_free() {
    let cfg = write_config(
        r#"{"p0": [0.2, 0.3, 0.5], "p1": [0.2, 0.3, 0.5],
            "distortion": {"kind": "lp_power", "p": 2}}"#,
    );
    let doc = stdout_json(&run(&["emd", "--config", cfg.to_str().unwrap()]));
    assert_eq!(doc["result"]["cost"].as_f64().unwrap(), 0.0);
}

#[test]
fn simulation_results_do_not_depend_on_the_thread_count() {
    let cfg = write_config(
        r#"{"game": "np", "p0": [0.7, 0.3], "p1": [0.2, 0.8],
            "distortion": {"kind": "hamming"}, "delta0": 0.1, "delta1": 0.1,
            "lambda": 0.05, "n_grid": [6, 9], "trials": 2000, "seed": 5}"#,
    );
    let one = stdout_json(&run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--threads",
        "1",
    ]));
    let four = stdout_json(&run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--threads",
        "4",
    ]));
    assert_eq!(one["result"], four["result"]);
    assert_ne!(one["diagnostics"]["threads"], four["diagnostics"]["threads"]);
}

#[test]
fn the_seed_flag_overrides_the_config_seed() {
    let cfg = write_config(
        r#"{"game": "np", "p0": [0.7, 0.3], "p1": [0.2, 0.8],
            "distortion": {"kind": "hamming"}, "delta0": 0.1, "delta1": 0.1,
            "lambda": 0.05, "n_grid": [6, 8, 10], "trials": 20000, "seed": 5}"#,
    );
    let base = stdout_json(&run(&["simulate", "--config", cfg.to_str().unwrap()]));
    let other = stdout_json(&run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "6",
    ]));
    assert_eq!(base["config_echo"]["seed"], "5");
    assert_eq!(other["config_echo"]["seed"], "6");
    assert_eq!(base["result"]["seed"].as_u64(), Some(5));
    assert_eq!(other["result"]["seed"].as_u64(), Some(6));
    assert_ne!(base["result"]["points"], other["result"]["points"]);
}

#[test]
fn simulate_csv_has_one_row_per_blocklength() {
    let cfg = write_config(
        r#"{"game": "np", "p0": [0.7, 0.3], "p1": [0.2, 0.8],
            "distortion": {"kind": "hamming"}, "delta0": 0.1, "delta1": 0.1,
            "lambda": 0.05, "n_grid": [4, 6, 8], "trials": 500}"#,
    );
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "n,trials,fp_events,fn_events,fp_rate,fn_rate,fp_ci_lo,fp_ci_hi,fn_ci_lo,fn_ci_hi"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("4,500,"));
}

#[test]
fn attack_samples_are_reproducible_and_well_formed() {
    let cfg = write_config(
        r#"{"p0": [0.5, 0.5], "distortion": {"kind": "hamming"},
            "delta0": 0.5, "x": [0, 1, 0, 1, 1, 0], "trials": 3, "seed": 9}"#,
    );
    let first = run(&["attack-sample", "--config", cfg.to_str().unwrap()]);
    let doc = stdout_json(&first);
    assert_eq!(doc["result"]["n"].as_u64(), Some(6));
    assert_eq!(doc["result"]["k"].as_u64(), Some(2));
    let classes: u64 = doc["result"]["admissible_classes"]
        .as_str()
        .unwrap()
        .parse()
        .unwrap();
    assert!(classes >= 1);
    let samples = doc["result"]["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 3);
    let x = [0u64, 1, 0, 1, 1, 0];
    for s in samples {
        let y = s.as_array().unwrap();
        assert_eq!(y.len(), 6);
        assert!(y.iter().all(|v| v.as_u64().unwrap() < 2));
        // Hamming budget one half over six symbols allows at most three
        // changed positions.
        let flips = y
            .iter()
            .zip(x)
            .filter(|(a, b)| a.as_u64().unwrap() != *b)
            .count();
        assert!(flips <= 3);
    }
    let second = run(&["attack-sample", "--config", cfg.to_str().unwrap()]);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn exact_error_output_matches_the_library() {
    let cfg = write_config(
        r#"{"game": "bayes", "mode": "ratio", "p0": [0.7, 0.3], "p1": [0.2, 0.8],
            "distortion": {"kind": "hamming"}, "delta0": 0.25, "delta1": 0.5,
            "a": 0.1, "n": 5}"#,
    );
    let doc = stdout_json(&run(&["exact-error", "--config", cfg.to_str().unwrap()]));
    let spec = detgame::GameSpec::new(
        detgame::Pmf::new(vec![0.7, 0.3]).unwrap(),
        detgame::Pmf::new(vec![0.2, 0.8]).unwrap(),
        detgame::make_distortion(detgame::DistortionKind::Hamming, 2).unwrap(),
        0.25,
        0.5,
    )
    .unwrap();
    let defense = detgame::Defense::Bayes {
        a: 0.1,
        mode: detgame::BayesMode::Ratio,
    };
    let want = detgame::exact_error_probs(&spec, &defense, 5).unwrap();
    // Seventeen significant digits survive the parse exactly.
    assert_eq!(
        doc["result"]["false_positive"].as_f64().unwrap(),
        want.false_positive
    );
    assert_eq!(
        doc["result"]["false_negative"].as_f64().unwrap(),
        want.false_negative
    );
}
