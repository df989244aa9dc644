use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nikodym-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

#[test]
fn thresholds_run_writes_summary_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["thresholds", "--n", "3"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(json["passed"], true);
    assert_eq!(json["thresholds"][0]["threshold"], "10/3");
    assert!(dir.path().join("data.csv").exists());
}

#[test]
fn curvature_run_is_deterministic_and_plotted() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = lab(&["curvature", "--k", "2", "--seed", "9"], d.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let csv_a = std::fs::read(a.path().join("data.csv")).unwrap();
    let csv_b = std::fs::read(b.path().join("data.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    let header = String::from_utf8_lossy(&csv_a).lines().next().unwrap().to_owned();
    assert_eq!(header, "experiment,n,family,parameter,value,stderr,seed");
    assert!(a.path().join("plots/curvature_order_k2.svg").exists());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lab.toml");
    std::fs::write(&cfg, "k = 3\nseed = 4\nplots = false\n").unwrap();
    let out = lab(&["curvature", "--config", cfg.to_str().unwrap(), "--k", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["k"], 2);
    assert_eq!(json["config"]["seed"], 4);
    assert_eq!(json["fits"][0]["name"], "curvature_order_k2");
    assert!(!dir.path().join("plots").exists());
}

#[test]
fn bad_configuration_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lab(&["everything"], dir.path()).status.code(), Some(2));
    assert_eq!(lab(&["thresholds", "--delta-range", "5..2"], dir.path()).status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "colour = \"blue\"\n").unwrap();
    assert_eq!(
        lab(&["thresholds", "--config", cfg.to_str().unwrap()], dir.path()).status.code(),
        Some(2)
    );
}

#[test]
fn experiment_errors_exit_one_with_the_error_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["dimension", "--n", "4"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["errors"][0]["kind"], "domain");
    assert_eq!(json["passed"], false);
}
