use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn optbal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optbal"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn simulate_illustrative(dir: &Path) {
    let o = optbal(dir, &["simulate", "--kind", "illustrative", "--n", "2000", "--seed", "9", "--out", "ill.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_writes_data_schema_and_truth() {
    let tmp = TempDir::new().unwrap();
    simulate_illustrative(tmp.path());
    for f in ["ill.csv", "ill.schema.json", "ill.truth.json"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("ill.truth.json")).unwrap()).unwrap();
    assert_eq!(truth["sample"]["true_satt"], 0.0);
}

#[test]
fn ebal_balances_the_illustrative_data() {
    let tmp = TempDir::new().unwrap();
    simulate_illustrative(tmp.path());
    let o = optbal(tmp.path(), &["balance", "--input", "ill.csv", "--method", "ebal", "--out", "w.json", "--table", "bal.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(tmp.path().join("bal.csv")).unwrap();
    assert!(!table.contains('\r'));
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("role,feature,before,after"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[1], "social_support");
    assert!(row[2].parse::<f64>().unwrap().abs() > 0.1);
    assert!(row[3].parse::<f64>().unwrap().abs() <= 1e-8);
    let w: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("w.json")).unwrap()).unwrap();
    assert_eq!(w["solutions"][0]["method"], "ebal");
}

#[test]
fn estimate_prints_a_result() {
    let tmp = TempDir::new().unwrap();
    simulate_illustrative(tmp.path());
    let o = optbal(tmp.path(), &["estimate", "--input", "ill.csv", "--method", "ebal", "--estimand", "satt"]);
    assert_eq!(code(&o), 0);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["point"].as_f64().unwrap().abs() < 0.1);
    assert_eq!(r["estimator"], "hajek");
}

#[test]
fn unknown_method_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    simulate_illustrative(tmp.path());
    let o = optbal(tmp.path(), &["balance", "--input", "ill.csv", "--method", "magic"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("ebal") && err.contains("mipmatch"), "{err}");
}

#[test]
fn missing_input_and_bad_flags_exit_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&optbal(tmp.path(), &["balance", "--method", "ebal"])), 1);
    assert_eq!(code(&optbal(tmp.path(), &["estimate", "--frobnicate"])), 1);
    assert_eq!(code(&optbal(tmp.path(), &["--help"])), 0);
}

#[test]
fn infeasible_sbw_exits_two() {
    let tmp = TempDir::new().unwrap();
    let o = optbal(tmp.path(), &["simulate", "--n", "40", "--p", "10", "--seed", "1", "--out", "s.csv"]);
    assert_eq!(code(&o), 0);
    let o = optbal(
        tmp.path(),
        &["balance", "--input", "s.csv", "--method", "sbw", "--delta", "0", "--features", "raw+squares+interactions"],
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let tmp = TempDir::new().unwrap();
    simulate_illustrative(tmp.path());
    fs::write(tmp.path().join("run.json"), r#"{"input": "ill.csv", "method": {"id": "naive"}}"#).unwrap();
    let from_cfg = optbal(tmp.path(), &["estimate", "--config", "run.json"]);
    assert_eq!(code(&from_cfg), 0);
    let r: serde_json::Value = serde_json::from_slice(&from_cfg.stdout).unwrap();
    assert_eq!(r["method"], "naive");
    let flagged = optbal(tmp.path(), &["estimate", "--config", "run.json", "--method", "ebal"]);
    assert_eq!(code(&flagged), 0);
    let r: serde_json::Value = serde_json::from_slice(&flagged.stdout).unwrap();
    assert_eq!(r["method"], "ebal");
    assert!(String::from_utf8_lossy(&flagged.stderr).contains("overrides"));
}

#[test]
fn bench_outputs_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    let args = ["bench", "--methods", "oracle,naive,ebal", "--reps", "4", "--seed", "3"];
    let a = optbal(tmp.path(), &[&args[..], &["--out", "a", "--workers", "2"]].concat());
    let b = optbal(tmp.path(), &[&args[..], &["--out", "b", "--workers", "1"]].concat());
    assert_eq!(code(&a), 0);
    assert_eq!(code(&b), 0);
    for f in ["report.csv", "report.txt", "runs.jsonl"] {
        let (x, y) = (tmp.path().join("a").join(f), tmp.path().join("b").join(f));
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{f}");
    }
    let table = String::from_utf8(a.stdout).unwrap();
    let oracle = table.lines().find(|l| l.starts_with("oracle")).unwrap();
    assert!(oracle.contains("4/4") && oracle.contains("0.000"), "{oracle}");
    let csv = fs::read_to_string(tmp.path().join("a/report.csv")).unwrap();
    assert!(csv.starts_with("method,datasets_solved,datasets_total,bias_mean,bias_sd,rmse\n"));
}

#[test]
fn diagnose_reports_groups_and_differences() {
    let tmp = TempDir::new().unwrap();
    simulate_illustrative(tmp.path());
    let o = optbal(tmp.path(), &["diagnose", "--input", "ill.csv"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("subjects,2000\n"));
    assert!(text.contains("\nsocial_support,"));
}
