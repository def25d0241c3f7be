//! End-to-end CLI checks: subcommands, output formats and exit codes.

use std::path::Path;
use std::process::Command;

fn plr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plr"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("smoke.toml");
    std::fs::write(
        &path,
        format!(
            r#"
name = "cli-smoke"
dataset = "synthetic"
architecture = "FMNIST3"
mode = "buffer"
strategies = ["IR", [0.0, 0.3, 0.7]]
seeds = [1]
batch_size = 32
steps_per_task = 2
buffer_capacity = 32
buffer_insert_all_steps = true
output_dir = "{}"
"#,
            dir.join("runs").display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn cost_prints_published_values() {
    let out = plr()
        .args(["cost", "ARCH1", "IR", "0.7,0.3", "0.5,0.5", "0.3,0.7"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["100.0%", "71.4%", "52.4%", "33.3%", "4200000"] {
        assert!(text.contains(needle), "missing {needle} in:\n{text}");
    }
}

#[test]
fn cost_json_is_machine_readable() {
    let out = plr()
        .args(["cost", "ARCH2", "0.34,0.33,0.33", "--json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let r = parsed[0]["relative_cost"].as_f64().unwrap();
    assert!((r * 100.0 - 52.9).abs() < 0.05);
}

#[test]
fn unknown_architecture_exits_with_config_code() {
    let out = plr().args(["cost", "ARCH9", "IR"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("unknown architecture"));
}

#[test]
fn invalid_strategy_exits_with_config_code() {
    let out = plr().args(["cost", "ARCH1", "0.9,0.3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("missing.toml");
    std::fs::write(
        &cfg,
        format!(
            r#"
name = "missing-data"
dataset = "cifar10"
architecture = "ARCH1"
mode = "buffer"
strategy = "IR"
seeds = [1]
output_dir = "{}"
data_dir = "{}"
"#,
            dir.path().join("runs").display(),
            dir.path().join("no-data-here").display()
        ),
    )
    .unwrap();
    let out = plr().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("cifar-10-binary.tar.gz"), "instructions missing:\n{err}");
}

#[test]
fn validate_accepts_good_and_rejects_bad() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = plr().arg("validate").arg(&cfg).output().unwrap();
    assert!(out.status.success());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\n").unwrap();
    let out = plr().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_table_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = plr().arg("run").arg(&cfg).output().unwrap();
    assert!(
        out.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // locate the content-hashed run directory
    let runs_dir = dir.path().join("runs");
    let run_dir = std::fs::read_dir(&runs_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| p.is_dir() && p.file_name().unwrap().to_string_lossy().starts_with("cli-smoke"))
        .expect("run directory exists");
    assert!(run_dir.join("summary.csv").exists());

    let out = plr()
        .arg("table")
        .arg(&run_dir)
        .args(["--id", "T1", "--save"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("IR"));
    assert!(text.contains("100.0%"));
    assert!(run_dir.join("table.csv").exists());

    let out = plr()
        .arg("plot")
        .arg(&run_dir)
        .args(["--id", "cost-vs-acc"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "plot failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(run_dir.join("cost_vs_accuracy.svg").exists());

    // rerun without --force reuses the results
    let out = plr().arg("run").arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("already complete"));
}
