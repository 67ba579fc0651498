use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use residualize::io::ResidualizationReport;
use residualize::stats::norm_cdf;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn resid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resid"))
        .args(args)
        .env_remove("RESID_THREADS")
        .output()
        .expect("binary runs")
}

fn resid_threads(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resid"))
        .args(args)
        .env("RESID_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_of(out: &Output) -> (i32, String) {
    let code = out.status.code().unwrap();
    let v: Value = serde_json::from_slice(&out.stderr).expect("error JSON on stderr");
    assert_eq!(v["exit_code"], code);
    (code, v["error"].as_str().unwrap().to_string())
}

fn write_temp(text: &str) -> tempfile::NamedTempFile {
    let f = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(f.path(), text).unwrap();
    f
}

fn analyze(name: &str) -> Output {
    resid(&["analyze", "--input", fixture(name).to_str().unwrap()])
}

#[test]
fn golden_report_is_byte_identical() {
    let out = analyze("golden.csv");
    assert!(out.status.success());
    let golden = std::fs::read(fixture("golden.json")).unwrap();
    assert_eq!(out.stdout, golden);
}

#[test]
fn golden_lambda_matches_independent_script() {
    // Printed by tests/fixtures/check_lambda.py.
    let expected = [1.396724080347, 0.473165897441, -0.002484591635];
    let v = stdout_json(&analyze("golden.csv"));
    for (row, want) in v["decomposition"].as_array().unwrap().iter().zip(expected) {
        assert!((row["lambda"].as_f64().unwrap() - want).abs() < 1e-11);
    }
    let est = |i: usize| v["estimates"][i]["estimate"].as_f64().unwrap();
    assert!((est(0) - 0.517686547691).abs() < 1e-11);
    assert!((est(1) - 0.465844230123).abs() < 1e-11);
}

#[test]
fn null_covariates_change_little() {
    let v = stdout_json(&analyze("null_covariates.csv"));
    assert!(v["diagnostics"]["informativeness"].as_f64().unwrap() < 0.01);
    let c = v["estimates"][0]["estimate"].as_f64().unwrap();
    let c_r = v["estimates"][1]["estimate"].as_f64().unwrap();
    let se = v["estimates"][0]["se"].as_f64().unwrap();
    assert!((c - c_r).abs() < 0.1 * se);
}

#[test]
fn p_values_follow_t_statistics() {
    let v = stdout_json(&analyze("golden.csv"));
    for row in v["estimates"].as_array().unwrap() {
        let t = row["t_stat"].as_f64().unwrap();
        let p = row["p_value"].as_f64().unwrap();
        assert!((p - 2.0 * norm_cdf(-t.abs())).abs() < 1e-6);
    }
}

#[test]
fn report_round_trips() {
    let out = analyze("golden.csv");
    let report: ResidualizationReport = serde_json::from_slice(&out.stdout).unwrap();
    let again = residualize::io::to_json(&report).unwrap();
    assert_eq!(again, String::from_utf8(out.stdout).unwrap());
}

#[test]
fn decompose_sums_to_correction() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = resid(&[
        "analyze",
        "--input",
        fixture("golden.csv").to_str().unwrap(),
        "--output",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v = stdout_json(&resid(&["decompose", "--input", report.to_str().unwrap()]));
    let total = v["total"].as_f64().unwrap();
    assert!((total - v["correction"].as_f64().unwrap()).abs() < 1e-12);
    let diff = v["original"].as_f64().unwrap() - v["residualized"].as_f64().unwrap();
    assert!((total - diff).abs() < 1e-12);
    let text = resid(&["decompose", "--input", report.to_str().unwrap(), "--format", "text"]);
    assert!(String::from_utf8(text.stdout).unwrap().contains("x1"));
}

#[test]
fn csv_and_text_formats() {
    let path = fixture("golden.csv");
    let csv = resid(&["analyze", "--input", path.to_str().unwrap(), "--format", "csv"]);
    let csv = String::from_utf8(csv.stdout).unwrap();
    assert!(csv.starts_with("key,value\n"));
    assert!(csv.contains("decomposition.0.covariate,x1\n"));
    let text = resid(&["analyze", "--input", path.to_str().unwrap(), "--format", "text"]);
    assert!(String::from_utf8(text.stdout).unwrap().contains("residualized        0.465844"));
}

#[test]
fn cluster_mode_runs() {
    let mut text = String::from("y,t,x,g\n");
    for i in 0..400 {
        let t = i % 2;
        let x = ((i * 37) % 101) as f64 / 50.0 - 1.0;
        let y = 0.5 * t as f64 + x + ((i * 13) % 7) as f64 / 7.0;
        text.push_str(&format!("{y},{t},{x},g{}\n", i / 8));
    }
    let f = write_temp(&text);
    let v = stdout_json(&resid(&[
        "analyze",
        "--input",
        f.path().to_str().unwrap(),
        "--cluster-col",
        "g",
    ]));
    assert_eq!(v["covariance"], "cluster");
    assert_eq!(v["clusters"], 50);
    assert_eq!(v["p_gamma"], 1);
}

#[test]
fn input_errors_exit_2() {
    let f = write_temp("y,x\n1,2\n");
    let out = resid(&["analyze", "--input", f.path().to_str().unwrap()]);
    assert_eq!(error_of(&out), (2, "MissingColumn".into()));

    let f = write_temp("y,t,x\n1,0,1\n2,1,2\n3,2,0\n");
    let out = resid(&["analyze", "--input", f.path().to_str().unwrap()]);
    assert_eq!(error_of(&out), (2, "NonBinaryTreatment".into()));

    let f = write_temp("y,t,x\n1,0,1\ninf,1,2\n");
    let out = resid(&["analyze", "--input", f.path().to_str().unwrap()]);
    assert_eq!(error_of(&out), (2, "NonFiniteValue".into()));

    let f = write_temp("");
    let out = resid(&["analyze", "--input", f.path().to_str().unwrap()]);
    assert_eq!(error_of(&out), (2, "EmptyFile".into()));

    let out = resid(&["analyze", "--input", "/nonexistent/data.csv"]);
    assert_eq!(error_of(&out), (2, "Io".into()));

    let f = write_temp(r#"{"lab": "bootstrap", "n": 100, "reps": 1000, "seed": 1}"#);
    let out = resid(&["simulate", "--config", f.path().to_str().unwrap()]);
    assert_eq!(error_of(&out), (2, "UnknownLab".into()));

    let out = resid(&["simulate", "--lab", "selection", "--n", "49", "--reps", "1000", "--seed", "1"]);
    assert_eq!(error_of(&out), (2, "InvalidConfig".into()));

    let out = resid(&["simulate", "--lab", "selection", "--n", "100", "--reps", "1000"]);
    assert_eq!(error_of(&out), (2, "InvalidConfig".into()));
}

#[test]
fn numerical_errors_exit_3() {
    let out = resid(&["oracle", "--rho", "1.5"]);
    assert_eq!(error_of(&out), (3, "DomainError".into()));

    let out = resid(&[
        "simulate", "--lab", "selection", "--n", "100", "--reps", "1000", "--seed", "1",
        "--threshold", "0.001",
    ]);
    assert_eq!(error_of(&out), (3, "DegenerateRule".into()));

    let mut text = String::from("y,t,a,b\n");
    for i in 0..20 {
        text.push_str(&format!("{},{},{},{}\n", i % 5, i % 2, i, 2 * i));
    }
    let f = write_temp(&text);
    let out = resid(&["analyze", "--input", f.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let f = write_temp("y,t,x\n1,1,0\n2,1,1\n3,1,2\n");
    let out = resid(&["analyze", "--input", f.path().to_str().unwrap()]);
    assert_eq!(error_of(&out), (3, "EmptyArm".into()));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(resid(&["analyze"]).status.code(), Some(2));
    assert_eq!(resid(&["frobnicate"]).status.code(), Some(2));
}

const SELECTION: &[&str] = &[
    "simulate", "--lab", "selection", "--rho", "0.5", "--n", "200", "--reps", "1000", "--seed", "7",
];

#[test]
fn selection_is_reproducible_across_threads() {
    let a = resid(SELECTION);
    let b = resid(SELECTION);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(resid_threads(SELECTION, "1").stdout, a.stdout);
    assert_eq!(resid_threads(SELECTION, "3").stdout, a.stdout);
}

#[test]
fn selection_output_embeds_config_and_oracle() {
    let v = stdout_json(&resid(SELECTION));
    assert_eq!(v["config"]["seed"], 7);
    assert_eq!(v["config"]["lab"], "selection");
    let zs = v["result"]["oracle"]["cond_var_zs"].as_f64().unwrap();
    assert!((zs - 0.9398).abs() < 1e-4);
    assert_eq!(v["result"]["stats"]["reps"], 1000);
}

#[test]
fn config_file_with_overrides() {
    let f = write_temp(
        r#"{"lab": "selection", "design": {"kind": "gaussian", "rho": 0.0},
            "rule": {"kind": "wald"}, "threshold": 3.84, "n": 100, "reps": 5000, "seed": 3}"#,
    );
    let v = stdout_json(&resid(&[
        "simulate",
        "--config",
        f.path().to_str().unwrap(),
        "--reps",
        "1000",
    ]));
    assert_eq!(v["config"]["reps"], 1000);
    assert_eq!(v["config"]["rule"]["kind"], "wald");
    let t = v["result"]["oracle"]["t"].as_f64().unwrap();
    assert!((t - 3.84f64.sqrt()).abs() < 1e-12);
}

#[test]
fn misspec_with_zero_mu_has_no_bias() {
    let v = stdout_json(&resid(&[
        "simulate", "--lab", "misspec", "--n", "100", "--reps", "1000", "--seed", "5", "--mu", "0",
    ]));
    let rows = v["result"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    for entry in rows[0]["entries"].as_array().unwrap() {
        let b = &entry["measured"]["sqrt_n_bias"];
        let (value, se) = (b["value"].as_f64().unwrap(), b["mc_se"].as_f64().unwrap());
        assert!(value.abs() < 4.0 * se, "{value} vs se {se}");
    }
}

#[test]
fn oracle_command() {
    let v = stdout_json(&resid(&["oracle", "--rho", "0.5", "--threshold", "1.96"]));
    assert!((v["cond_var_zgamma"].as_f64().unwrap() - 0.758855277).abs() < 1e-9);
    let v = stdout_json(&resid(&["oracle", "--rho", "-0.5"]));
    assert!((v["cond_var_zs"].as_f64().unwrap() - 0.939713819).abs() < 1e-9);
}
