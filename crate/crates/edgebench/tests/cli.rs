use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const EXE: &str = env!("CARGO_BIN_EXE_edgebench");

fn edgebench(args: &[&str]) -> Output {
    Command::new(EXE).args(args).output().expect("edgebench runs")
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulated_suites_with_one_seed_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = edgebench(&["run", "--sim-time", "--seed", "42", "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let files = files_under(&a);
    assert_eq!(files, files_under(&b));
    assert!(files.iter().any(|f| f.ends_with("report_VIII.json")));
    assert!(files.iter().any(|f| f.ends_with("summary.txt")));
    for f in &files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{}", f.display());
    }
}

#[test]
fn single_scenario_writes_one_report_and_analyze_agrees() {
    let tmp = tempfile::tempdir().unwrap();
    let out = edgebench(&[
        "run", "--sim-time", "--scenario", "I", "--repetitions", "1", "--out", tmp.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 2, "{stdout}");
    assert!(tmp.path().join("report_I.json").exists());
    assert!(!tmp.path().join("report_II.json").exists());

    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("report_I.json")).unwrap()).unwrap();
    let rep_dir = tmp.path().join("I").join("rep1");
    let analyzed = edgebench(&["analyze", rep_dir.to_str().unwrap()]);
    assert!(analyzed.status.success());
    let analyzed: serde_json::Value = serde_json::from_slice(&analyzed.stdout).unwrap();
    assert_eq!(analyzed["loss_pct"], report["aggregate"]["measured_loss_pct"]);
    assert_eq!(analyzed["mean_ms"], report["repetitions"][0]["mean_ms"]);
}

#[test]
fn config_errors_name_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bench.toml");
    fs::write(&cfg, "[run]\nseed = 7\nduraton = 5\n").unwrap();
    let out = edgebench(&["run", "--sim-time", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bench.toml:3:"), "{err}");
}

#[test]
fn flags_override_the_file_and_failed_verdicts_set_the_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bench.toml");
    // a throttled local bridge loses messages the prediction does not expect
    fs::write(
        &cfg,
        "[run]\nscenario = \"VIII\"\nrepetitions = 1\nduration = 30\n\n[tuning]\nbridge_rate_hz = 5.0\nedge_capacity = 50\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("out");
    let args = ["run", "--sim-time", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
    let out = edgebench(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    let mut with_flag = args.to_vec();
    with_flag.extend(["--scenario", "IV"]);
    let out = edgebench(&with_flag);
    assert!(out_dir.join("report_IV.json").exists());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn serve_edge_announces_its_address() {
    let mut child = Command::new(EXE)
        .args(["serve-edge", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    let addr: std::net::SocketAddr = line.trim().strip_prefix("listening ").unwrap().parse().unwrap();
    assert_ne!(addr.port(), 0);
}

#[test]
fn distributed_run_over_child_processes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = edgebench(&[
        "run", "--distributed", "--scenario", "II", "--duration", "3", "--repetitions", "1",
        "--out", tmp.path().to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("report_II.json")).unwrap()).unwrap();
    let checks = report["repetitions"][0]["conservation"].as_array().unwrap();
    assert_eq!(checks.len(), 3);
}
