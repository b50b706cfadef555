use std::path::PathBuf;
use std::process::{Command, Output};

fn qnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn presets_list_needs_no_config() {
    let o = qnet(&["presets", "list"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("switch"));
    assert!(text.contains("memory_dyn"));
}

#[test]
fn validate_accepts_a_shipped_config() {
    let o = qnet(&["validate", "--config", &config("switch2.toml")]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("strictly-admissible"));
}

#[test]
fn validate_warns_on_overload_without_failing() {
    let o = qnet(&["validate", "--config", &config("switch2_overload.toml")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("warning:"));
}

#[test]
fn linear_potential_is_a_config_failure() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("switch2.toml"))
        .unwrap()
        .replace("max_scalar(sum_scalar(pow(1.0)))", "max_scalar(linear)");
    let path = dir.path().join("linear.toml");
    std::fs::write(&path, text).unwrap();
    let path = path.to_string_lossy();
    assert_eq!(
        qnet(&["validate", "--config", &path]).status.code(),
        Some(1)
    );
    let out = dir.path().join("out");
    let run = qnet(&[
        "run",
        "--config",
        &path,
        "--slots",
        "1000",
        "--out",
        &out.to_string_lossy(),
    ]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn capacity_reports_margin_and_witness() {
    let o = qnet(&["capacity", "--config", &config("switch2.toml")]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("margin: 0.111111111"), "{text}");
    assert!(text.contains("witness:"));
    let relaxed = qnet(&["capacity", "--relaxed", "--config", &config("switch2.toml")]);
    assert!(stdout(&relaxed).contains("margin: 0.111111111"));
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = qnet(&[
        "run",
        "--config",
        &config("switch2.toml"),
        "--slots",
        "20000",
        "--replications",
        "2",
        "--seed",
        "3",
        "--out",
        &out.to_string_lossy(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("timeseries_rep0.csv").exists());
    assert!(out.join("timeseries_rep1.csv").exists());
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 3"));
    assert!(summary.contains("\"slots\": 20000"));
}

#[test]
fn sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = qnet(&[
        "sweep",
        "--config",
        &config("switch2.toml"),
        "--slots",
        "5000",
        "--replications",
        "1",
        "--grid",
        "0.5,1.2",
        "--quiet",
        "--out",
        &out.to_string_lossy(),
    ]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn missing_config_exits_with_one() {
    assert_eq!(
        qnet(&["run", "--config", "/nonexistent/x.toml"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(qnet(&["validate"]).status.code(), Some(1));
}
