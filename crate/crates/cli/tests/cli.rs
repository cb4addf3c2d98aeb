use std::process::{Command, Output, Stdio};
use std::io::Write;

fn autodfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_autodfl"))
        .args(args)
        .env_remove("AUTODFL_GAS_CALIBRATION")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &[&str] = &["--tasks", "2", "--rounds", "2", "--task-dim", "8"];

#[test]
fn gas_table_prints_sixteen_rows() {
    let o = autodfl(&["gas-table", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 16);
    let p = rows
        .iter()
        .find(|r| r["function"] == "publishTask" && r["calls"] == 100)
        .unwrap();
    assert_eq!(p["total"], 742_115);
    assert_eq!(p["l1_equivalent"], 17_736_655);
}

#[test]
fn calibration_file_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_autodfl"))
        .arg("gas-table")
        .env("AUTODFL_GAS_CALIBRATION", &path)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_reports_each_rate() {
    let o = autodfl(&["sweep", "--rates", "40,320"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 5, "{out}");
    assert!(out.lines().any(|l| l.starts_with("L1") && l.contains("320.0")));
}

#[test]
fn run_is_deterministic_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["run"];
    args.extend_from_slice(SMALL);
    let a = autodfl(&args);
    args.extend_from_slice(&["--out", out]);
    let b = autodfl(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(stdout(&a), stdout(&b));
    for f in ["trajectories.csv", "gas.csv", "metrics.json", "audit.json", "scenario.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    // every stored blob can be read back by its cid
    let store = dir.path().join("store");
    let name = std::fs::read_dir(&store).unwrap().next().unwrap().unwrap().file_name();
    let cid = name.to_str().unwrap();
    let o = autodfl(&["store", "cat", cid, "--dir", store.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!stdout(&o).trim().is_empty());
}

#[test]
fn scenario_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, r#"{"seed": 3, "tasks": [{"repeat": 1, "rounds": 2, "dataset": {"dim": 4}}]}"#).unwrap();
    let o = autodfl(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["tasks"], 1);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"oracles": {"count": 3, "dishonest": 2}}"#).unwrap();
    let o = autodfl(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("oracles.dishonest"));
    assert_eq!(autodfl(&["run", "--rounds", "0"]).status.code(), Some(1));
    assert_eq!(autodfl(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(autodfl(&["run", "/no/such/file.json"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cid = "00".repeat(32);
    let o = autodfl(&["store", "cat", &cid, "--dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let mut args = vec!["inspect", "task", "99"];
    args.extend_from_slice(SMALL);
    assert_eq!(autodfl(&args).status.code(), Some(2));
}

#[test]
fn rep_eval_reads_stdin() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_autodfl"))
        .args(["rep", "eval"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(br#"{"outcome": {"score_auto": 0.8, "completed_rounds": 5, "total_rounds": 10,
            "distance": 2.0, "normalized_distance": 0.75}, "params": {"tau": {"fixed": 0.5}}}"#)
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["objective"].as_f64().unwrap() - 0.2).abs() < 1e-9);
}

#[test]
fn inspect_task_and_round() {
    let mut args = vec!["inspect", "task", "1"];
    args.extend_from_slice(SMALL);
    let o = autodfl(&args);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["trainers"].as_array().unwrap().len(), 3);
    assert_eq!(v["task"]["settled"], true);

    let mut args = vec!["don", "inspect", "2", "1"];
    args.extend_from_slice(SMALL);
    let o = autodfl(&args);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["reports"].as_array().unwrap().len(), 4);
}
