//! Runs the `bergman-lab` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bergman-lab"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("BERGMAN_LAB_THREADS", t),
        None => cmd.env_remove("BERGMAN_LAB_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL_KERNEL: &str = r#"{
    "experiment": "kernel",
    "kernel_pairs": 500,
    "quad": [96, 128],
    "ball_quad": [16, 16, 32]
}"#;

const SMALL_DECOMPOSITION: &str = r#"{
    "experiment": "decomposition",
    "k_list": [1],
    "decomposition_m": [0, 5],
    "flow_quad": [16, 24],
    "s_nodes": 32
}"#;

#[test]
fn small_runs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    for (name, json) in [("kernel.json", SMALL_KERNEL), ("decomposition.json", SMALL_DECOMPOSITION)] {
        let config = write_config(dir.path(), name, json);
        let first = lab(&["--config", &config], None);
        assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
        let second = lab(&["--config", &config], Some("1"));
        let wide = lab(&["--config", &config], Some("2"));
        assert!(!first.stdout.is_empty());
        assert_eq!(first.stdout, second.stdout, "{name}");
        assert_eq!(first.stdout, wide.stdout, "{name}");
    }
}

#[test]
fn csv_output_has_the_report_header() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "kernel.json", SMALL_KERNEL);
    let out = dir.path().join("report.csv");
    let run = lab(&["--config", &config, "--out", out.to_str().unwrap()], None);
    assert_eq!(run.status.code(), Some(0));
    assert!(run.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), bergman_lab::experiments::CSV_HEADER.join(","));
    for line in lines {
        assert!(line.starts_with("kernel,"), "{line}");
    }
}

#[test]
fn json_output_parses() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "decomposition.json", SMALL_DECOMPOSITION);
    let run = lab(&["--config", &config, "--format", "json"], None);
    assert_eq!(run.status.code(), Some(0));
    let value: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    let rows = value.as_array().expect("array of rows");
    assert!(!rows.is_empty());
    for row in rows {
        assert_eq!(row["experiment"], "decomposition");
        assert!(row["pass"].is_string());
    }
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(lab(&["--no-such-flag"], None).status.code(), Some(2));
    assert_eq!(lab(&["--experiment", "smoothing", "--n", "3"], None).status.code(), Some(2));
    assert_eq!(lab(&["--experiment", "nonsense"], None).status.code(), Some(2));
    assert_eq!(lab(&["--config", "/nonexistent/config.json"], None).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", r#"{"experiment": "kernel", "quads": [8, 8]}"#);
    assert_eq!(lab(&["--config", &bad], None).status.code(), Some(2));
    assert_eq!(lab(&["--experiment", "kernel"], Some("many")).status.code(), Some(2));
}

#[test]
fn failed_checks_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "strict.json",
        r#"{
            "experiment": "kernel",
            "kernel_pairs": 200,
            "quad": [96, 128],
            "ball_quad": [16, 16, 32],
            "tolerances": {"kernel_harmonicity": 0.0}
        }"#,
    );
    let run = lab(&["--config", &config], None);
    assert_eq!(run.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("FAIL kernel"), "{stderr}");
    assert!(stderr.contains("harmonicity"), "{stderr}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "decomposition.json", SMALL_DECOMPOSITION);
    let a = lab(&["--config", &config], None);
    let b = lab(&["--config", &config, "--seed", "7"], None);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    // the random split polynomials depend on the seed
    assert_ne!(a.stdout, b.stdout);
}
