use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn cpbias(args: &[&str], dir: &Path, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cpbias"));
    cmd.args(args).current_dir(dir).env_remove("CPTUNE_TEST_FORCE_VIOLATION");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("failed to launch cpbias")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_BIAS: &str = r#"{
  "kind": "bias",
  "experiment": {
    "data": {"kind": "random", "num_classes": 3, "feature_dim": 2, "spread": 1.5, "noise_sd": 1.0},
    "score": {"kind": "thr"},
    "tuner": {"kind": "adversarial", "m": 20},
    "n_cal": 50,
    "n_test": 200,
    "replications": 40,
    "seed": 3
  }
}"#;

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn minimal_config_gets_documented_defaults() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"kind": "bias", "experiment": {
            "data": {"kind": "random", "num_classes": 3, "feature_dim": 2, "spread": 1.0, "noise_sd": 1.0},
            "score": {"kind": "thr"}, "tuner": {"kind": "identity"}, "n_cal": 20, "n_test": 50}}"#,
    );
    let o = cpbias(&["bias", "--config", &cfg, "--out", "run", "--quiet"], tmp.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("run/manifest.json")).unwrap()).unwrap();
    let exp = &m["config"]["experiment"];
    assert_eq!(exp["alpha"], 0.1);
    assert_eq!(exp["replications"], 100);
    assert_eq!(exp["split_fraction"], 0.5);
    assert_eq!(exp["seed"], 0);
    assert_eq!(exp["data"]["true_temp"], 1.0);
    assert_eq!(m["replication_seeds"].as_array().unwrap().len(), 100);
    assert_eq!(m["status"], "ok");
    for f in ["results.csv", "summary.csv", "bounds.csv", "manifest.json"] {
        assert!(tmp.path().join("run").join(f).exists(), "missing {f}");
    }
}

#[test]
fn unknown_key_is_rejected_by_name() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &SMALL_BIAS.replace("\"n_cal\"", "\"alhpa\": 0.1, \"n_cal\""));
    let o = cpbias(&["bias", "--config", &cfg], tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("alhpa"), "{}", stderr(&o));
}

#[test]
fn out_of_range_alpha_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &SMALL_BIAS.replace("\"n_cal\"", "\"alpha\": 1.5, \"n_cal\""));
    let o = cpbias(&["bias", "--config", &cfg], tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("alpha"), "{}", stderr(&o));
}

#[test]
fn malformed_json_reports_a_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", "{\n  \"kind\": \"dkw\",\n  \"n\": ,\n}");
    let o = cpbias(&["dkw", "--config", &cfg], tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(cpbias(&["bias"], tmp.path(), &[]).status.code(), Some(1));
    assert_eq!(cpbias(&["frobnicate"], tmp.path(), &[]).status.code(), Some(1));
    let cfg = write_config(tmp.path(), "c.json", SMALL_BIAS);
    let o = cpbias(&["dkw", "--config", &cfg], tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("subcommand"));
    let o = cpbias(&["bias", "--config", "missing.json"], tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn coverage_check_lands_in_the_sandwich() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"kind": "coverage-check", "experiment": {
            "data": {"kind": "random", "num_classes": 5, "feature_dim": 3, "spread": 1.5, "noise_sd": 1.0},
            "score": {"kind": "thr"}, "tuner": {"kind": "identity"},
            "n_cal": 100, "n_test": 500, "replications": 200, "seed": 1}}"#,
    );
    let o = cpbias(&["coverage-check", "--config", &cfg, "--out", "cc", "--quiet"], tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut rd = csv::Reader::from_path(tmp.path().join("cc/results.csv")).unwrap();
    let headers = rd.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 201);
    let last = rows.last().unwrap();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    assert_eq!(&last[col("rep")], "mean");
    let mean: f64 = last[col("coverage")].parse().unwrap();
    assert!((0.88..=0.93).contains(&mean), "{mean}");
}

#[test]
fn forced_violation_exits_three() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"kind": "bounds", "entries": [{"kind": "finite", "cardinality": 2, "n": 10}]}"#);
    let o = cpbias(&["bounds", "--config", &cfg, "--quiet"], tmp.path(), &[("CPTUNE_TEST_FORCE_VIOLATION", "1")]);
    assert_eq!(o.status.code(), Some(3));
    let m: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "invariant_violation");
}

#[test]
fn runtime_failure_exits_two() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("blocker"), "").unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"kind": "bounds", "entries": [{"kind": "vc", "d": 1, "n": 200}]}"#);
    let o = cpbias(&["bounds", "--config", &cfg, "--out", "blocker/sub"], tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bounds_table() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"kind": "bounds", "entries": [
            {"kind": "finite", "cardinality": 200, "n": 1000},
            {"kind": "raps", "m": 20, "k_bar": 10, "n": 1000},
            {"kind": "vc", "d": 1, "n": 200}]}"#,
    );
    let o = cpbias(&["bounds", "--config", &cfg, "--quiet"], tmp.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("out/bounds.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "experiment_id,kind,cardinality,m,k_bar,dim,c,n,value,clamped,certified");
    let value = |l: &str| l.split(',').nth(8).unwrap().parse::<f64>().unwrap();
    assert!((value(lines[1]) - 0.0639).abs() < 1e-4);
    assert_eq!(value(lines[1]), value(lines[2]));
    assert!(lines[3].starts_with("entry-2,vc,,,,1,1.0,200,0.1,0.1,false"), "{}", lines[3]);
    assert!(!text.contains('\r'));
}

#[test]
fn dkw_run_respects_the_bound() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"kind": "dkw", "n": 50, "eps": 0.15, "trials": 5000}"#);
    let o = cpbias(&["dkw", "--config", &cfg, "--seed", "9", "--quiet"], tmp.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 9);
}

#[test]
fn identical_runs_write_identical_tables() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL_BIAS);
    for (out, threads) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let o = cpbias(&["bias", "--config", &cfg, "--out", out, "--threads", threads, "--quiet"], tmp.path(), &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["results.csv", "summary.csv", "bounds.csv"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(tmp.path().join("b").join(f)).unwrap(), "{f} differs between runs");
        assert_eq!(a, fs::read(tmp.path().join("c").join(f)).unwrap(), "{f} differs across thread counts");
    }
    let o = cpbias(&["bias", "--config", &cfg, "--out", "d", "--seed", "4", "--quiet"], tmp.path(), &[]);
    assert!(o.status.success());
    assert_ne!(
        fs::read(tmp.path().join("a/results.csv")).unwrap(),
        fs::read(tmp.path().join("d/results.csv")).unwrap()
    );
}

#[test]
fn sweeps_and_sup_process_run() {
    let tmp = TempDir::new().unwrap();
    let sweep = SMALL_BIAS
        .replace("\"kind\": \"bias\"", "\"kind\": \"sweep-n\", \"n_values\": [20, 40]");
    let cfg = write_config(tmp.path(), "s.json", &sweep);
    let o = cpbias(&["sweep-n", "--config", &cfg, "--out", "s", "--quiet"], tmp.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(tmp.path().join("s/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    let cx = SMALL_BIAS.replace("\"kind\": \"bias\"", "\"kind\": \"sweep-complexity\", \"levels\": [1, 10]");
    let cfg = write_config(tmp.path(), "x.json", &cx);
    let o = cpbias(&["sweep-complexity", "--config", &cfg, "--out", "x", "--quiet"], tmp.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bounds = fs::read_to_string(tmp.path().join("x/bounds.csv")).unwrap();
    assert!(bounds.lines().nth(1).unwrap().contains(",selection,1,"), "{bounds}");

    let sup = SMALL_BIAS.replace("\"kind\": \"bias\"", "\"kind\": \"sup-process\", \"reference_factor\": 10");
    let cfg = write_config(tmp.path(), "p.json", &sup);
    let o = cpbias(&["sup-process", "--config", &cfg, "--out", "p", "--quiet"], tmp.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("p/results.csv")).unwrap();
    assert_eq!(text.lines().count(), 42);
}

#[test]
fn cqr_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "q.json",
        r#"{"kind": "cqr", "n_values": [50, 100], "experiment": {
            "regression": {"mean_fn": "sinusoid", "noise_fn": "linear_abs", "feature_dim": 2},
            "num_models": 20, "n_train": 100, "n_cal": 50, "n_test": 200, "replications": 5}}"#,
    );
    let o = cpbias(&["cqr", "--config", &cfg, "--quiet"], tmp.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("out/results.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("experiment_id,n_cal,num_models,method,coverage_mean,coverage_std,length_mean"));
}
