use std::path::Path;
use std::process::{Command, Output};

use feller_cli::config::ConfigFile;
use feller_cli::scenarios::{builtins, registry};
use serde_json::Value;

fn feller(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feller")).args(args).output().expect("spawn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("elapsed");
            m.values_mut().for_each(strip_timing);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

const QUICK: &str = r#"{
  "schema": 1,
  "scenarios": [
    {
      "name": "quick_signdrift",
      "description": "small-grid heat + sign drift",
      "base": {"kind": "heat"},
      "perturbation": {"family": "levy", "drift": {"kind": "sign", "scale": 1.0}},
      "times": [0.5],
      "functions": [{"kind": "bump", "center": 0.0, "radius": 1.0}],
      "checks": ["submarkov", "conservative", "contractivity", "mc"],
      "mc": {"x0": 0.5, "t": 0.5, "dt": 0.01, "n_paths": 20000},
      "grid": {"x_min": -8.0, "x_max": 8.0, "n": 256},
      "tolerances": {"dyson": {"rho": 1.1}}
    },
    {
      "name": "wrongly_expected",
      "base": {"kind": "heat"},
      "perturbation": {"family": "levy", "drift": {"kind": "sign", "scale": 1.0}},
      "times": [0.5],
      "functions": [{"kind": "bump", "center": 0.0, "radius": 1.0}],
      "checks": ["contractivity"],
      "expected_fail": ["contractivity"],
      "grid": {"x_min": -8.0, "x_max": 8.0, "n": 128},
      "tolerances": {"dyson": {"rho": 1.1}}
    },
    {
      "name": "starved_quadrature",
      "base": {"kind": "heat"},
      "perturbation": {"family": "levy", "drift": {"kind": "sign", "scale": 1.0}},
      "checks": ["submarkov"],
      "grid": {"x_min": -8.0, "x_max": 8.0, "n": 128},
      "tolerances": {"dyson": {"rho": 1.1, "residual_tol": 1e-14, "time_nodes": 4}}
    }
  ]
}"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("scenarios.json");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn list_counts() {
    let o = feller(&["list"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 7);

    let tmp = tempfile::tempdir().unwrap();
    let one = r#"{"schema": 1, "scenarios": [{"name": "extra", "base": {"kind": "cauchy"}, "perturbation": {"family": "zero"}}]}"#;
    let o = feller(&["list", "--config", &write_config(tmp.path(), one)]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 8);
    assert!(out.lines().last().unwrap().starts_with("extra"));

    let o = feller(&["list", "--config", &write_config(tmp.path(), r#"{"schema": 1, "scenarios": []}"#)]);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 7);
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(code(&feller(&["run", "no_such_scenario"])), 2);
    let tmp = tempfile::tempdir().unwrap();
    for bad in [
        "not json",
        r#"{"schema": 2, "scenarios": []}"#,
        r#"{"schema": 1, "scenarios": [{"name": "x", "base": {"kind": "heat"}, "perturbation": {"family": "zero"}, "bogus": 1}]}"#,
        r#"{"schema": 1, "scenarios": [{"name": "x", "base": {"kind": "heat"}, "perturbation": {"family": "zero"}, "checks": ["mc"]}]}"#,
    ] {
        let o = feller(&["list", "--config", &write_config(tmp.path(), bad)]);
        assert_eq!(code(&o), 2, "{bad}");
    }
    let o = feller(&["run", "heat_rank_one", "--grid-points", "100", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn builtins_validate_and_user_entries_replace() {
    for s in builtins() {
        s.validate().unwrap();
        assert!(!s.description.is_empty());
    }
    let mut c = ConfigFile::parse(QUICK).unwrap();
    c.scenarios[0].name = "heat_rank_one".into();
    let all = registry(Some(&c));
    assert_eq!(all.len(), 9);
    assert_eq!(all[1].description, "small-grid heat + sign drift");
}

#[test]
fn rank_one_expected_fail_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = feller(&["run", "heat_rank_one", "--grid-points", "256", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let r = report(tmp.path());
    let v = &r["properties"]["verdicts"];
    assert_eq!(v["cinfty_decay"]["raw"], "fail");
    assert_eq!(v["cinfty_decay"]["verdict"], "pass");
    assert_eq!(v["cinfty_decay"]["expected_fail"], true);
    assert_eq!(v["rank_one_oracle"]["verdict"], "pass");
    assert_eq!(r["grid"]["n"], 256);
    assert_eq!(r["seed"], 0);
    assert!(r["tolerances"]["oracle"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(tmp.path().join("functions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 257);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 1 + 2 * 2);
}

#[test]
fn quick_scenario_passes_and_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QUICK);
    let runs: Vec<Value> = ["a", "b"]
        .iter()
        .map(|d| {
            let dir = tmp.path().join(d);
            let o = feller(&["run", "quick_signdrift", "--config", &cfg, "--seed", "11", "--out", dir.to_str().unwrap()]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
            let mut r = report(&dir);
            strip_timing(&mut r);
            r
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0]["seed"], 11);
    assert!(runs[0]["mc"]["z_score"].as_f64().unwrap().abs() <= 3.0);
    let a = std::fs::read(tmp.path().join("a/functions.csv")).unwrap();
    assert_eq!(a, std::fs::read(tmp.path().join("b/functions.csv")).unwrap());
}

#[test]
fn check_failure_and_divergence_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QUICK);
    let dir = tmp.path().join("w");
    let o = feller(&["run", "wrongly_expected", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert_eq!(report(&dir)["properties"]["verdicts"]["contractivity"]["raw"], "pass");

    let dir = tmp.path().join("d");
    let o = feller(&["run", "starved_quadrature", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let r = report(&dir);
    assert_eq!(r["exit_code"], 3);
    assert!(r["error"].as_str().unwrap().contains("residual"));
}

#[test]
fn several_scenarios_with_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QUICK);
    let out = tmp.path().join("many");
    let o = feller(&[
        "run",
        "wrongly_expected",
        "heat_rank_one",
        "--grid-points",
        "256",
        "--config",
        &cfg,
        "--jobs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert_eq!(report(&out.join("heat_rank_one"))["exit_code"], 0);
    assert_eq!(report(&out.join("wrongly_expected"))["exit_code"], 1);
}

#[test]
fn dump_matrix_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QUICK);
    let path = tmp.path().join("m.bin");
    let o = feller(&[
        "dump-matrix",
        "quick_signdrift",
        "--config",
        &cfg,
        "--format",
        "binary",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = feller_core::OperatorMatrix::read_binary(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(m.n(), 256);
    assert!(m.min_entry() >= -1e-8);
}
