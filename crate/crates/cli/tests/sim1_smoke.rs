use std::process::Command;
use std::time::{Duration, Instant};

use pathshift::simulation::SimReport;

#[test]
fn single_replicate_sim1_run_is_quick() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_pathshift"))
        .arg("--out")
        .arg(dir.path())
        .args(["simulate", "--dgp", "sim1", "--reps", "1"])
        .output()
        .unwrap();
    let elapsed = start.elapsed();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    println!("sim1 smoke run: {elapsed:?}");
    assert!(elapsed < Duration::from_secs(60), "{elapsed:?}");
    let report = SimReport::from_json(&std::fs::read_to_string(dir.path().join("simulation.json")).unwrap()).unwrap();
    assert_eq!(report.reps, 1);
    assert!(report.failures.is_empty());
    assert_eq!(report.cells.len(), 5 * 6 * 2);
}
