use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn recwin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recwin")).args(args).env_remove("RECWIN_THREADS").output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("JSON on stderr")
}

fn simulate(dir: &Path, name: &str, n: usize, seed: u64) -> String {
    let path = dir.join(name);
    let p = path.to_str().unwrap().to_string();
    let out = recwin(&["simulate", "--preset", "scenario-1", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", &p]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    p
}

#[test]
fn wr_reports_json_and_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d.csv", 100, 11);
    let out = recwin(&["wr", "--input", &data, "--rule", "lwr"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["rule"], "lwr");
    assert_eq!(v["n_pairs"], 2500);
    let (w, l, t) = (v["wins"].as_u64().unwrap(), v["losses"].as_u64().unwrap(), v["ties"].as_u64().unwrap());
    assert_eq!(w + l + t, 2500);
    assert!((v["wr"].as_f64().unwrap() - w as f64 / l as f64).abs() < 1e-12);

    let strat = stdout_json(&recwin(&["wr", "--input", &data, "--rule", "swr", "--stratify", "z2"]));
    assert_eq!(strat["stratified"], true);
}

#[test]
fn wide_schema_round_trip_gives_same_wr() {
    let dir = tempfile::tempdir().unwrap();
    let wide = dir.path().join("w.csv");
    let wide = wide.to_str().unwrap();
    let long = simulate(dir.path(), "l.csv", 80, 5);
    let out = recwin(&["simulate", "--preset", "scenario-1", "--n", "80", "--seed", "5", "--schema", "b", "--out", wide]);
    assert!(out.status.success());
    let a = stdout_json(&recwin(&["wr", "-i", &long, "--rule", "fwr"]));
    let b = stdout_json(&recwin(&["wr", "-i", wide, "--schema", "b", "--rule", "fwr"]));
    assert_eq!(a, b);
}

#[test]
fn empty_arm_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d.csv", 30, 2);
    let text = fs::read_to_string(&data).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let trt = header.split(',').position(|c| c == "trt").unwrap();
    let kept: Vec<&str> = lines.filter(|l| l.split(',').nth(trt) == Some("1")).collect();
    let one_arm = dir.path().join("one.csv");
    fs::write(&one_arm, format!("{header}\n{}\n", kept.join("\n"))).unwrap();

    let out = recwin(&["wr", "--input", one_arm.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let e = stderr_json(&out);
    assert_eq!(e["error"], "EmptyArm");
    assert_eq!(e["exit_code"], 3);
}

#[test]
fn invalid_histories_and_inputs_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let gap = dir.path().join("gap.csv");
    fs::write(&gap, "id,tstart,tstop,event,death,trt\n1,0,1,1,0,1\n1,2,3,0,0,1\n2,0,2,0,0,0\n").unwrap();
    let out = recwin(&["wr", "-i", gap.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "GapOrOverlapInIntervals");

    let missing = recwin(&["wr", "-i", dir.path().join("absent.csv").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let null = recwin(&["ss-wr", "--zeta0", "0.8", "--delta0", "0", "--xi", "0"]);
    assert_eq!(null.status.code(), Some(2));
    assert_eq!(stderr_json(&null)["error"], "NullEffect");

    assert_eq!(recwin(&["wr", "-i", "x.csv", "--rule", "bogus"]).status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a.csv", 50, 99);
    let b = simulate(dir.path(), "b.csv", 50, 99);
    let c = simulate(dir.path(), "c.csv", 50, 100);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(format!("{a}.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
    assert_eq!(manifest["scenario"]["n_subjects"], 50);
}

#[test]
fn schoenfeld_plan_matches_closed_form() {
    let v = stdout_json(&recwin(&["ss-schoenfeld", "--inflation", "0.05"]));
    assert_eq!(v["events"], 1156);
    assert_eq!(v["n"].as_u64().unwrap() % 2, 0);
}

#[test]
fn jfm_fit_reports_tests() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d.csv", 150, 4);
    let v = stdout_json(&recwin(&["jfm", "-i", &data, "--alpha", "fixed:1", "--baseline", "weibull"]));
    assert_eq!(v["converged"], true);
    let tests = v["tests"].as_array().unwrap();
    assert!(tests.iter().any(|t| t["test"] == "joint-treatment" && t["df"] == 2));
    assert_eq!(tests.iter().filter(|t| t["test"] == "univariate").count(), 4);
}

fn study_config(dir: &Path) -> String {
    let data = simulate(dir, "template.csv", 60, 1);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(format!("{data}.json")).unwrap()).unwrap();
    let cfg = json!({
        "scenario": manifest["scenario"],
        "methods": [
            { "method": "wr", "rule": "lwr" },
            { "method": "wr", "rule": "nwr", "stratify": "z2" },
            { "method": "jfm" }
        ],
        "reps": 6,
        "seed": 21
    });
    let path = dir.join("study.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn run_study(config: &str, out_dir: &Path, threads: &str) -> Vec<Vec<u8>> {
    let od = out_dir.to_str().unwrap();
    let out = recwin(&["--threads", threads, "replicate-study", "--config", config, "--out-dir", od]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    ["replicates.csv", "summary.json", "summary.md"].iter().map(|f| fs::read(out_dir.join(f)).unwrap()).collect()
}

#[test]
fn replicate_study_is_reproducible_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = study_config(dir.path());
    let first = run_study(&cfg, &dir.path().join("r1"), "1");
    let again = run_study(&cfg, &dir.path().join("r2"), "1");
    let wide = run_study(&cfg, &dir.path().join("r3"), "4");
    assert_eq!(first, again);
    assert_eq!(first, wide);

    let summary: Value = serde_json::from_slice(&first[1]).unwrap();
    assert_eq!(summary["seed"], 21);
    assert_eq!(summary["methods"].as_array().unwrap().len(), 3);
    let csv = String::from_utf8(first[0].clone()).unwrap();
    assert!(csv.starts_with("rep,seed,method,status"));

    let overridden = recwin(&["replicate-study", "--config", &cfg, "--reps", "2", "--seed", "5", "--format", "markdown"]);
    assert!(overridden.status.success());
    assert!(String::from_utf8(overridden.stdout).unwrap().contains("Models fitted = 2/2"));
}

#[test]
fn unknown_config_fields_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"scenario": {}, "methods": [], "reps": 1, "seed": 1, "colour": 3}"#).unwrap();
    let out = recwin(&["replicate-study", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
