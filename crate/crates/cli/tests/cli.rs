use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn swapkd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swapkd"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .env_remove("SWAPKD_THREADS")
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("error report is JSON")
}

#[test]
fn evaluate_writes_one_row_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = swapkd(
        dir.path(),
        &["evaluate", "--alpha-d", "10", "--chi", "0.1", "--eta0", "0.3"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "evaluate.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("alpha_d_db,chi,eta0,dark_count_mode,"));
    assert!(lines[0].ends_with(",n_max_used,converged,error"));
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    assert!(lines[1].starts_with("1.00000000000e1,1.00000000000e-1,3.00000000000e-1,constraint,"));

    let m: Value = serde_json::from_str(&read(dir.path(), "evaluate_manifest.json")).unwrap();
    assert_eq!(m["schema"], "swapkd-manifest/1");
    assert_eq!(m["command"], "evaluate");
    assert_eq!(m["outputs"][0], "evaluate.csv");
    assert_eq!(m["diagnostics"][0]["converged"], true);
}

#[test]
fn out_of_range_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = swapkd(
        dir.path(),
        &["evaluate", "--alpha-d", "10", "--chi", "0.1", "--eta0", "1.3"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "invalid-input");
    assert!(!dir.path().join("evaluate.csv").exists());
}

#[test]
fn conflicting_dark_count_modes_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"p_dc": 1e-6, "constraint": {"a": 6.1e-7, "b": 17}}"#).unwrap();
    let out = swapkd(dir.path(), &["evaluate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"chi": [0.1], "brightness": 0.2}"#).unwrap();
    let out = swapkd(dir.path(), &["evaluate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("brightness"));
}

#[test]
fn unknown_figure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = swapkd(dir.path(), &["figure", "fig9"]);
    assert_eq!(out.status.code(), Some(2));
    let out = swapkd(dir.path(), &["figure", "fig4", "--variant", "z"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn figure_grids_cannot_be_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let out = swapkd(dir.path(), &["figure", "fig4", "--chi", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_and_flags_merge() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"alpha_d_db": [0, 10], "chi": [0.1], "eta0": [0.3], "p_dc": 1e-6}"#,
    )
    .unwrap();
    let out = swapkd(
        dir.path(),
        &["sweep", "--config", cfg.to_str().unwrap(), "--chi", "0.05,0.1"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "sweep.csv");
    assert_eq!(csv.lines().count(), 5);
    let m: Value = serde_json::from_str(&read(dir.path(), "sweep_manifest.json")).unwrap();
    assert_eq!(m["config"]["chi"], serde_json::json!([0.05, 0.1]));
    assert_eq!(m["config"]["p_dc"], 1e-6);
}

#[test]
fn replay_reproduces_csv_bytes() {
    let first = tempfile::tempdir().unwrap();
    let out = swapkd(
        first.path(),
        &[
            "sweep",
            "--alpha-d",
            "0,20",
            "--chi",
            "log:1e-3:1e-1:3",
            "--eta0",
            "0.2",
            "--pdc",
            "1e-6",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let second = tempfile::tempdir().unwrap();
    let manifest = first.path().join("sweep_manifest.json");
    let out = swapkd(second.path(), &["replay", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(first.path(), "sweep.csv"), read(second.path(), "sweep.csv"));
}

#[test]
fn thread_count_from_flag_and_environment() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["sweep", "--alpha-d", "0,30", "--chi", "0.02,0.1", "--eta0", "0.3"];
    let out = swapkd(a.path(), &[&["--threads", "1"], &args[..]].concat());
    assert_eq!(out.status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_swapkd"))
        .arg("--out-dir")
        .arg(b.path())
        .args(args)
        .env("SWAPKD_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let threads = |dir: &Path| {
        let m: Value = serde_json::from_str(&read(dir, "sweep_manifest.json")).unwrap();
        m["threads"].as_u64().unwrap()
    };
    assert_eq!(threads(a.path()), 1);
    assert_eq!(threads(b.path()), 3);
    assert_eq!(read(a.path(), "sweep.csv"), read(b.path(), "sweep.csv"));

    let out = Command::new(env!("CARGO_BIN_EXE_swapkd"))
        .args(["evaluate", "--alpha-d", "0", "--chi", "0.1", "--eta0", "0.3"])
        .env("SWAPKD_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn decoy_comparison_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = swapkd(
        dir.path(),
        &[
            "compare-decoy",
            "--alpha-d",
            "0,20",
            "--eta0",
            "0.2",
            "--pdc",
            "1e-6",
            "--chi",
            "0.12",
            "--mu",
            "0.5",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let decoy = read(dir.path(), "compare-decoy_decoy.csv");
    assert!(decoy.starts_with("alpha_d_db,eta0,p_dc,background_detectors,kappa,mu_mode,mu,nu,"));
    assert_eq!(decoy.lines().count(), 3);
    let es = read(dir.path(), "compare-decoy_es.csv");
    assert!(es.starts_with("alpha_d_db,eta0,p_dc,kappa,n_max,convergence_tol,chi_mode,chi,"));
}

#[test]
fn unconverged_point_exits_3_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = swapkd(
        dir.path(),
        &["sweep", "--alpha-d", "0", "--chi", "0.1,0.3", "--eta0", "0.1"],
    );
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "not-converged");
    assert_eq!(err["point"]["chi"], 0.3);
    let csv = read(dir.path(), "sweep.csv");
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(rows[0].ends_with(",true,"));
    assert!(rows[1].ends_with(",not-converged"));
    let m: Value = serde_json::from_str(&read(dir.path(), "sweep_manifest.json")).unwrap();
    assert_eq!(m["summary"]["failed_rows"], 1);
    assert_eq!(m["error"]["exit_code"], 3);
}
