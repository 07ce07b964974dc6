use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pathshift::decomposition::{ComponentLabel, ComponentScale, DecompositionReport};
use pathshift::simulation::SimReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pathshift"));
    c.env_remove("PATHSHIFT_SEED");
    c
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn decompose(out: &Path, extra: &[&str]) -> Output {
    run(bin()
        .arg("--config")
        .arg(fixtures().join("meps_like.toml"))
        .arg("--out")
        .arg(out)
        .arg("decompose")
        .args(extra))
}

fn reports(out: &Path) -> Vec<DecompositionReport> {
    let text = fs::read_to_string(out.join("decomposition.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn meps_like_geometric_report_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = decompose(dir.path(), &[]).stdout;
    let text = String::from_utf8(stdout).unwrap();
    assert!(text.contains("Hispanic") && text.contains("Black"));
    assert!(text.contains("95% CI") && text.contains("p-value"));

    let reps = reports(dir.path());
    assert_eq!(reps.len(), 2);
    for r in &reps {
        assert_eq!(r.meta.k, 4);
        assert_eq!(r.meta.comparison, "White");
        assert!(r.sequential.is_none());
        let natural = r.natural.as_ref().unwrap();
        let mut want: Vec<ComponentLabel> = (1..=4).map(ComponentLabel::Mediator).collect();
        want.extend([ComponentLabel::OutcomeAttributed, ComponentLabel::Total]);
        for label in want {
            let c = natural.iter().find(|c| c.label == label).unwrap();
            assert_eq!(c.scale, ComponentScale::GeometricRatio);
            assert!(c.point > 0.0 && c.ci_lo <= c.point && c.point <= c.ci_hi, "{label}: {c:?}");
            assert!((0.0..=1.0).contains(&c.p_value));
        }
        let back = DecompositionReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(&back, r);
    }

    let csv = fs::read_to_string(dir.path().join("decomposition.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("comparison,")).count(), 1);
    let rows = reps.iter().map(|r| r.natural.as_ref().unwrap().len()).sum::<usize>();
    assert_eq!(csv.lines().count(), rows + 1);
    assert!(dir.path().join("decomposition.txt").exists());
}

#[test]
fn both_decompositions_share_one_report() {
    let dir = tempfile::tempdir().unwrap();
    decompose(
        dir.path(),
        &["--decomposition", "both", "--scale", "difference", "--learner", "glm", "--pair", "Black:White"],
    );
    let reps = reports(dir.path());
    assert_eq!(reps.len(), 1);
    let r = &reps[0];
    assert_eq!(r.meta.reference, "Black");
    let seq = r.sequential.as_ref().unwrap();
    let natural = r.natural.as_ref().unwrap();
    let total = |v: &[pathshift::decomposition::DisparityComponent]| {
        v.iter().find(|c| c.label == ComponentLabel::Total).unwrap().point
    };
    assert_eq!(total(seq), total(natural));
    let steps: f64 = seq.iter().filter(|c| c.label != ComponentLabel::Total).map(|c| c.point).sum();
    assert!((steps - total(seq)).abs() < 1e-12);
}

#[test]
fn probability_scale_reruns_on_the_indicator() {
    let dir = tempfile::tempdir().unwrap();
    decompose(dir.path(), &["--scale", "probability", "--learner", "glm", "--pair", "Hispanic:White"]);
    let r = &reports(dir.path())[0];
    for c in r.natural.as_ref().unwrap() {
        assert_eq!(c.scale, ComponentScale::ProbabilityDifference);
        assert!(c.point.abs() <= 1.0);
    }
}

#[test]
fn seed_reproduces_byte_identical_reports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let args = ["--pair", "Black:White", "--crossfit-folds", "2"];
    decompose(a.path(), &[&args[..], &["--seed", "17"]].concat());
    decompose(b.path(), &[&args[..], &["--seed", "17"]].concat());
    run(bin()
        .env("PATHSHIFT_SEED", "17")
        .arg("--config")
        .arg(fixtures().join("meps_like.toml"))
        .arg("--out")
        .arg(c.path())
        .arg("decompose")
        .args(args));
    for name in ["decomposition.json", "decomposition.csv", "decomposition.txt"] {
        let x = fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, fs::read(b.path().join(name)).unwrap(), "{name}");
        assert_eq!(x, fs::read(c.path().join(name)).unwrap(), "{name} via environment");
    }
    assert_eq!(reports(a.path())[0].meta.seed, 17);
}

#[test]
fn inconsistent_settings_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--out"])
        .arg(dir.path())
        .args(["decompose", "--data"])
        .arg(fixtures().join("meps_like.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[roles]"));

    let out = bin()
        .arg("--config")
        .arg(fixtures().join("meps_like.toml"))
        .arg("--out")
        .arg(dir.path())
        .args(["decompose", "--delta", "0.7"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta"));
}

#[test]
fn oracle_check_passes_on_shipped_fixtures() {
    let out = run(bin()
        .args(["oracle-check", "--mc-draws", "200000", "--seed", "3"])
        .arg("--fixture")
        .arg(core_fixture("toy_k1.json"))
        .arg("--fixture")
        .arg(core_fixture("toy_k2.json"))
        .arg("--fixture")
        .arg(core_fixture("toy_k4.json")));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches(": pass").count(), 3, "{text}");
    assert!(text.contains("mediator"));
}

#[test]
fn corrupted_fixture_fails_validation() {
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(core_fixture("toy_k1.json")).unwrap()).unwrap();
    v["outcome"]["probs"][0][0][0] = serde_json::json!([0.5, 0.4]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, v.to_string()).unwrap();
    let out = bin().args(["oracle-check", "--fixture"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid fixture"));
}

#[test]
fn tolerance_breach_exits_nonzero() {
    let out = bin()
        .args(["oracle-check", "--mc-draws", "1000", "--z", "0"])
        .arg("--fixture")
        .arg(core_fixture("toy_k2.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sim2_table1_grid_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate", "--dgp", "sim2", "--conditions", "table1", "--n", "400,800", "--reps", "3", "--truth-draws",
        "200000", "--seed", "5",
    ];
    run(bin().arg("--out").arg(dir.path()).args(args));
    let text = fs::read_to_string(dir.path().join("simulation.json")).unwrap();
    let report = SimReport::from_json(&text).unwrap();
    assert_eq!(report.base_seed, 5);
    assert_eq!(report.truths.len(), 5);
    // 3 conditions for the direct and first-mediator targets, 4 for the rest,
    // plus the two baselines, at two sample sizes.
    assert_eq!(report.cells.len(), 2 * (2 * 5 + 3 * 6));
    assert!(report.cell("gamma_mediator_3", 800, "glm_condition_4").is_some());
    assert!(report.cell("gamma_direct", 800, "glm_condition_4").is_none());
    let csv = fs::read_to_string(dir.path().join("simulation.csv")).unwrap();
    assert!(csv.starts_with("target,n,method,metric,value"));
    let curves = fs::read_to_string(dir.path().join("simulation_curves.dat")).unwrap();
    assert!(curves.contains("400") && curves.contains("800"));

    let again = tempfile::tempdir().unwrap();
    run(bin().arg("--out").arg(again.path()).args(args));
    assert_eq!(
        fs::read(dir.path().join("simulation.json")).unwrap(),
        fs::read(again.path().join("simulation.json")).unwrap()
    );
}

#[test]
fn discrete_fixture_can_drive_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    run(bin()
        .arg("--out")
        .arg(dir.path())
        .args(["simulate", "--n", "300", "--reps", "4", "--dgp"])
        .arg(core_fixture("toy_k2.json")));
    let report = SimReport::from_json(&fs::read_to_string(dir.path().join("simulation.json")).unwrap()).unwrap();
    assert!(report.dgp.starts_with("discrete_toy"));
    assert_eq!(report.cells.len(), 5);
    assert!(report.truths.iter().all(|t| t.se == 0.0));
}
