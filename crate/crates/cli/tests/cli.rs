use std::process::{Command, Output};

use serde_json::Value;

fn shapevar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapevar")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn eval_product_example() {
    let out = shapevar(&["eval", "--d", "3", "--p", "2", "--q", "2", "--R", "1", "--modes", "2:0.1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["schema"], 1);
    assert!(v["flags"].is_array());
    let g = v["results"]["product"]["paper"]["second"].as_f64().unwrap();
    assert!((g + 71.0 / 162.0 * 0.01).abs() < 1e-15, "{g}");
    assert_eq!(v["results"]["product"]["paper"]["mode"], "paper");
    assert_eq!(v["results"]["product"]["derived"]["mode"], "derived");
}

#[test]
fn eval_is_byte_identical() {
    let args = ["eval", "--d", "5", "--p", "3.3", "--q", "1.7", "--R", "0.7", "--modes", "2:0.1,3:-2:0.25,5:1e-3"];
    assert_eq!(shapevar(&args).stdout, shapevar(&args).stdout);
}

#[test]
fn eval_rejects_translation_and_volume_modes() {
    let out = shapevar(&["eval", "--d", "3", "--p", "2", "--q", "2", "--R", "1", "--modes", "0:0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mode k=0 violates volume preservation"), "{err}");
    let out = shapevar(&["eval", "--d", "3", "--p", "2", "--q", "2", "--modes", "1:0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mode k=1"));
}

#[test]
fn eval_rejects_bad_params() {
    let out = shapevar(&["eval", "--d", "3", "--p", "3", "--q", "2", "--modes", "2:0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_capacity_vanishes_at_threshold() {
    let out = shapevar(&["eval", "--d", "4", "--p", "1.75", "--q", "3", "--R", "2", "--modes", "2:1"]);
    assert_eq!(out.status.code(), Some(0));
    let c = json(&out)["results"]["capacity"]["second"].as_f64().unwrap();
    assert!(c.abs() < 1e-13, "{c}");
}

#[test]
fn classify_csv_header_and_determinism() {
    let args = ["classify", "--d-list", "3,4", "--p-step", "0.5", "--q-step", "1", "--format", "csv"];
    let a = shapevar(&args);
    assert_eq!(a.status.code(), Some(0));
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    assert!(text.starts_with("d,p,q,mode,verdict,Z2,Z_tail_sign,"));
    assert!(text.lines().skip(1).all(|l| l.contains(",local_max,")));
    assert_eq!(a.stdout, shapevar(&args).stdout);
}

#[test]
fn classify_d7_reports_thresholds_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let plot = dir.path().join("plot.csv");
    let report = dir.path().join("report.json");
    let out = shapevar(&[
        "classify",
        "--d-list",
        "7",
        "--p-step",
        "0.05",
        "--q-step",
        "0.05",
        "--out",
        report.to_str().unwrap(),
        "--emit-plot-data",
        plot.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let summary = &v["results"]["summaries"][0];
    assert!(summary["verdict_counts"]["indefinite"].as_u64().unwrap() > 0);
    let p_star = summary["thresholds"]["p_star"].as_f64().unwrap();
    assert!(p_star > 1.0 && p_star < 7.0);
    let plot = std::fs::read_to_string(&plot).unwrap();
    assert!(plot.starts_with("d,mode,p,q,Z2,verdict"));
}

#[test]
fn classify_empty_grid_is_rejected() {
    let out = shapevar(&["classify", "--d-list", "3", "--p-min", "2.5", "--p-max", "2.0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_volume_and_capacity_pass() {
    let out = shapevar(&["verify", "--target", "volume", "--k", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let out = shapevar(&["verify", "--target", "capacity", "--k", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let row = &json(&out)["results"]["rows"][0];
    assert!((row["formula"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((row["oracle"].as_f64().unwrap() - 2.0).abs() < 1e-4);
}

#[test]
fn verify_torsion_reports_mismatch_with_exit_1() {
    let out = shapevar(&["verify", "--target", "torsion", "--k", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let row = &json(&out)["results"]["rows"][0];
    assert!((row["formula"].as_f64().unwrap() + 10.0 / 9.0).abs() < 1e-12);
    assert!((row["oracle"].as_f64().unwrap() + 4.0 / 9.0).abs() < 1e-4);
}

#[test]
fn verify_solver_failure_exits_3() {
    let out = shapevar(&["verify", "--target", "capacity", "--k", "4", "--L", "12", "--amplitude", "0.4"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn errata_flags_torsion_constant() {
    let out = shapevar(&["errata"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let flags: Vec<&str> = v["flags"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    assert!(flags.iter().any(|f| f.starts_with("torsion constant")));
    assert!(!flags.iter().any(|f| f.starts_with("capacity constant")));
    let t = &v["results"]["classical_checks"]["torsion_d3_q2"];
    assert!((t["derived"].as_f64().unwrap() - 4.0 * std::f64::consts::PI / 45.0).abs() < 1e-14);
}

#[test]
fn sweep_csv() {
    let out = shapevar(&[
        "sweep", "--d-list", "3", "--p-list", "1.5,2", "--q-list", "2", "--modes", "2:1", "--format", "csv",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn timing_is_opt_in() {
    let args = ["eval", "--d", "3", "--p", "2", "--q", "2", "--modes", "2:0.1"];
    assert!(json(&shapevar(&args)).get("timing").is_none());
    let mut with = args.to_vec();
    with.push("--timing");
    assert!(json(&shapevar(&with))["timing"]["wall_seconds"].is_number());
}
