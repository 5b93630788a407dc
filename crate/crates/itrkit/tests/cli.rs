//! End-to-end command-line tests: schemas, round trips, exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_itrkit")
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_weights_reduce_fit_predict_evaluate_chain() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");

    let out = run(&[
        "--seed",
        "11",
        "simulate",
        "--setting",
        "1",
        "--n",
        "150",
        "--randomized",
        "--out",
        path_str(&data),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.exists());
    let sidecar = data.with_extension("oracle.json");
    assert!(sidecar.exists());

    let out = run(&[
        "--seed",
        "12",
        "simulate",
        "--setting",
        "1",
        "--n",
        "200",
        "--randomized",
        "--out",
        path_str(&test),
    ]);
    assert!(out.status.success());

    // dataset schema: header row then n rows
    let text = std::fs::read_to_string(&data).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("A,Y,X1,"));
    assert_eq!(lines.count(), 150);

    let weights = dir.path().join("w.csv");
    let out = run(&[
        "--seed",
        "13",
        "weights",
        "--data",
        path_str(&data),
        "--method",
        "kcb",
        "--lambda2",
        "0.1",
        "--out",
        path_str(&weights),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let wtext = std::fs::read_to_string(&weights).unwrap();
    assert!(wtext.starts_with("index,treatment,weight,method"));

    let basis = dir.path().join("b.csv");
    let eig = dir.path().join("e.csv");
    let out = run(&[
        "reduce",
        "--data",
        path_str(&data),
        "--weights",
        path_str(&weights),
        "--epsilon",
        "1e-5",
        "--dim",
        "2",
        "--out-basis",
        path_str(&basis),
        "--out-eigenvalues",
        path_str(&eig),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let btext = std::fs::read_to_string(&basis).unwrap();
    assert_eq!(btext.lines().count(), 50); // one row per covariate
    assert_eq!(btext.lines().next().unwrap().split(',').count(), 2);

    let rule = dir.path().join("rule.json");
    let out = run(&[
        "fit",
        "--data",
        path_str(&data),
        "--weights",
        path_str(&weights),
        "--basis",
        path_str(&basis),
        "--lambda",
        "0.001",
        "--out",
        path_str(&rule),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let pred = dir.path().join("pred.csv");
    let out = run(&[
        "predict",
        "--rule",
        path_str(&rule),
        "--data",
        path_str(&test),
        "--out",
        path_str(&pred),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ptext = std::fs::read_to_string(&pred).unwrap();
    assert!(ptext.starts_with("index,treatment"));
    assert_eq!(ptext.lines().count(), 201);
    for line in ptext.lines().skip(1) {
        let t = line.split(',').nth(1).unwrap();
        assert!(t == "1" || t == "-1", "treatment {t}");
    }

    let report = dir.path().join("report.json");
    let out = run(&[
        "evaluate",
        "--rule",
        path_str(&rule),
        "--test",
        path_str(&test),
        "--oracle",
        path_str(&test.with_extension("oracle.json")),
        "--out",
        path_str(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let acc = rep["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(rep["value_pct_of_bayes"].as_f64().is_some());
}

#[test]
fn missing_column_is_a_config_error_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "P,Q\n1,2\n").unwrap();
    let w = dir.path().join("w.csv");
    let out = run(&[
        "weights",
        "--data",
        path_str(&bad),
        "--out",
        path_str(&w),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_setting_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--setting",
        "9",
        "--n",
        "10",
        "--out",
        path_str(&dir.path().join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn replicate_emits_fixed_schema_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out_csv = dir.path().join("reps.csv");
    let out = run(&[
        "--seed",
        "21",
        "replicate",
        "--settings",
        "1",
        "--methods",
        "dol-o,aol-o",
        "--reps",
        "2",
        "--n",
        "80",
        "--n-test",
        "200",
        "--randomized",
        "--out",
        path_str(&out_csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "replicate_id,setting,n,method,accuracy,value_pct,projection_error,wall_time_s,error"
    );
    assert_eq!(lines.count(), 4); // 2 reps x 2 methods
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("accuracy"), "summary printed: {stdout}");
}

#[test]
fn determinism_of_simulate_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = run(&[
            "--seed",
            "33",
            "simulate",
            "--setting",
            "2",
            "--n",
            "40",
            "--out",
            path_str(p),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read_to_string(&a).unwrap(),
        std::fs::read_to_string(&b).unwrap()
    );
}

#[test]
fn config_file_keys_are_applied_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "nonsense_key = 1\n").unwrap();
    let out = run(&[
        "--config",
        path_str(&cfg),
        "simulate",
        "--setting",
        "1",
        "--n",
        "5",
        "--out",
        path_str(&dir.path().join("d.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
