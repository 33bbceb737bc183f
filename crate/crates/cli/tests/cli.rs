use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_volaforge");

const SMALL: &str = r#"
seed = 11
output_dir = "out"
dataset = "m_har"
horizon = "day"
split = "70-10-20"
models = ["har", "ridge", "rf", "gb"]
stages = ["features", "forecast", "evaluate", "ale", "var"]

[simulate]
assets = ["A", "B"]
days = 450
vol_model = { kind = "square_root", kappa = 0.05, theta = 1e-4, xi = 0.002 }

[harness]
forest_trees = 20
refit_every = 10

[harness.grid]
lambda_points = 10
gb_trees = [20, 50]
gb_depths = [1, 2]

[evaluation]
bootstrap_reps = 200

[ale]
models = ["ridge", "rf"]
bins = 20
"#;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("VOLAFORGE_SEED").output().expect("binary runs")
}

fn collect(dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, out);
        } else {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
        }
    }
}

#[test]
fn unknown_model_exits_2_with_the_roster() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["forecast", "--models", "har,xgboost"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let body: serde_json::Value = serde_json::from_slice(&out.stderr).expect("JSON on stderr");
    assert_eq!(body["unknown"], serde_json::json!(["xgboost"]));
    let roster = body["valid_models"].as_array().unwrap();
    assert_eq!(roster.len(), 22);
    assert!(roster.iter().any(|m| m == "har"));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "seed = 1\nhorizon = \"fortnight\"\nsplit = \"half\"\n").unwrap();
    let out = run(&["run", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let body: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    // Bad horizon, bad split and no data source, reported together.
    let problems = body["problems"].as_array().unwrap();
    assert_eq!(problems.len(), 3, "{body}");
    assert!(problems[0].as_str().unwrap().starts_with("unknown horizon"));
}

#[test]
fn reruns_are_byte_identical_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let mut outputs = Vec::new();
    for (sub, extra) in [("a", None), ("b", None), ("c", Some("12"))] {
        let mut args = vec!["--jobs", "2", "run", "--config", "small.toml", "--out-dir", sub];
        if let Some(s) = extra {
            args.extend(["--seed", s]);
        }
        let out = run(&args, dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let mut files = Vec::new();
        collect(&dir.path().join(sub), &mut files);
        outputs.push(files);
    }
    let names: Vec<&str> = outputs[0].iter().map(|(n, _)| n.as_str()).collect();
    for want in ["forecasts.csv", "relmse.csv", "mcs.csv", "var.csv", "acf.csv"] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_ne!(outputs[0], outputs[2]);
    let forecasts = String::from_utf8(outputs[0].iter().find(|(n, _)| n == "forecasts.csv").unwrap().1.clone()).unwrap();
    assert!(forecasts.starts_with("# config_hash="));
    assert!(forecasts.lines().next().unwrap().ends_with("seed=11"));
}

#[test]
fn stages_compose_through_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let sim = run(&["simulate", "--config", "small.toml", "--out", "data"], dir.path());
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    assert!(dir.path().join("data/A/realized.csv").exists());
    let fc = run(
        &["forecast", "--config", "small.toml", "--data", "data", "--models", "har,ridge", "--out", "f.csv"],
        dir.path(),
    );
    assert!(fc.status.success(), "{}", String::from_utf8_lossy(&fc.stderr));
    let ev = run(&["evaluate", "--forecasts", "f.csv", "--out-dir", "ev", "--reps", "100"], dir.path());
    assert!(ev.status.success(), "{}", String::from_utf8_lossy(&ev.stderr));
    let relmse = fs::read_to_string(dir.path().join("ev/relmse.csv")).unwrap();
    assert!(relmse.contains("row_model,column_model,avg_ratio"));
    let missing = run(&["evaluate", "--forecasts", "nope.csv"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
}
