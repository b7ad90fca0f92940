use std::path::Path;
use std::process::{Command, Output};

fn cltlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cltlab"))
        .args(args)
        .current_dir(dir)
        .env_remove("CLTLAB_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

const TWO_STATE: &str = r#"{"model": {"type": "two_state", "a": 0.3, "b": 0.4}}"#;

#[test]
fn rate_csv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TWO_STATE);
    let out = cltlab(&["rate", "--config", &cfg, "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("o/rate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,distance,method,band_low,band_high"));
    assert_eq!(lines.count(), 7);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/rate.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
}

#[test]
fn empty_grid_exits_one_with_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"type": "two_state", "a": 0.3, "b": 0.4}, "params": {"n_grid": []}}"#,
    );
    let out = cltlab(&["rate", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let record: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(record["error"], "ConfigInvalid");
    assert_eq!(record["exit_code"], 1);
    assert!(dir.path().join("o/error.json").exists());
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"type": "chain", "kernel": [[0.7, 0.3], [0.4, 0.6]], "observable": [2, 2]}}"#,
    );
    let out = cltlab(&["martingale", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(record["error"], "DegenerateVariance");
}

#[test]
fn models_lists_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let out = cltlab(&["models", "--format", "csv", "--out", "o"], dir.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("o/models.csv")).unwrap();
    assert!(csv.starts_with("name,parameters,description\n"));
    assert!(csv.contains("two_state"));
    assert!(!dir.path().join("o/models.json").exists());
}

#[test]
fn env_overrides_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cltlab"))
        .args(["models", "--out", "flag"])
        .current_dir(dir.path())
        .env("CLTLAB_OUT", "env")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("env/models.csv").exists());
    assert!(!dir.path().join("flag").exists());
}

#[test]
fn unknown_command_yields_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = cltlab(&["nonsense"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().unwrap();
    let record: serde_json::Value = serde_json::from_str(last).unwrap();
    assert_eq!(record["error"], "ConfigInvalid");
}

#[test]
fn monte_carlo_is_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"type": "ar1_scalar", "a": 0.5, "s": 1.0},
            "params": {"n_grid": [10, 40, 160], "paths": 300, "sigma2": 4.0}}"#,
    );
    let mut outputs = Vec::new();
    for workers in ["1", "3", "8"] {
        let o = format!("o{workers}");
        let out = cltlab(
            &["rate", "--config", &cfg, "--seed", "20240917", "--workers", workers, "--out", &o],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((
            std::fs::read(dir.path().join(&o).join("rate.csv")).unwrap(),
            std::fs::read(dir.path().join(&o).join("rate.json")).unwrap(),
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let csv = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.contains(",mc-dkw,")));
}

#[test]
fn seed_flag_changes_mc_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"type": "ar1_scalar", "a": 0.5, "s": 1.0},
            "params": {"n_grid": [10, 40], "paths": 200, "sigma2": 4.0, "master_seed": 1}}"#,
    );
    let a = cltlab(&["rate", "--config", &cfg, "--out", "a"], dir.path());
    let b = cltlab(&["rate", "--config", &cfg, "--seed", "2", "--out", "b"], dir.path());
    assert!(a.status.success() && b.status.success());
    let ca = std::fs::read(dir.path().join("a/rate.csv")).unwrap();
    let cb = std::fs::read(dir.path().join("b/rate.csv")).unwrap();
    assert_ne!(ca, cb);
}
