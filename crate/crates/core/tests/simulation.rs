use std::path::PathBuf;

use pathshift::data::OutcomeScale;
use pathshift::estimand::EstimandId;
use pathshift::learners::Learner;
use pathshift::nuisance::NuisanceConfig;
use pathshift::oracle::DiscreteDgp;
use pathshift::simulation::{
    compute_truths, generate, misspecify_covariates, run_grid, DgpSpec, GridConfig, Method, Misspecification,
    Target, TruthMethod,
};

fn fixture(name: &str) -> DiscreteDgp {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    DiscreteDgp::load(path).unwrap()
}

fn discrete_grid(reps: usize) -> GridConfig {
    let mut nuisance = NuisanceConfig::with_learner(Learner::Saturated);
    nuisance.delta = 1e-6;
    GridConfig {
        targets: EstimandId::natural(2).into_iter().map(Target::gamma).collect(),
        n_list: vec![2000],
        reps,
        methods: vec![Method::new("saturated", nuisance, Misspecification::None)],
        scale: OutcomeScale::Raw,
        truth_draws: 0,
        truth_seed: 0,
        alpha: 0.05,
    }
}

#[test]
fn discrete_grid_is_centered_on_the_enumerated_truth() {
    let d = fixture("toy_k2.json");
    let spec = DgpSpec::discrete(&d).with_seed(3);
    let report = run_grid(&spec, &discrete_grid(60)).unwrap();
    for t in &report.truths {
        assert_eq!(t.method, TruthMethod::Enumeration);
    }
    for c in &report.cells {
        assert_eq!(c.failures, 0);
        let mc = c.sd / (c.reps as f64).sqrt();
        assert!(c.bias.abs() < 4.0 * mc + 1e-12, "{}: bias {} vs mc se {mc}", c.label, c.bias);
        assert!(c.coverage >= 0.8, "{}: coverage {}", c.label, c.coverage);
    }
}

#[test]
fn grids_are_reproducible() {
    let spec = DgpSpec::discrete(&fixture("toy_k2.json")).with_seed(8);
    let a = run_grid(&spec, &discrete_grid(4)).unwrap();
    let b = run_grid(&spec, &discrete_grid(4)).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let c = run_grid(&spec.clone().with_seed(9), &discrete_grid(4)).unwrap();
    assert_ne!(a.cells, c.cells);
}

#[test]
fn a_single_replicate_has_zero_spread() {
    let spec = DgpSpec::discrete(&fixture("toy_k2.json"));
    let report = run_grid(&spec, &discrete_grid(1)).unwrap();
    for c in &report.cells {
        assert_eq!(c.sd, 0.0);
        assert!((c.mse - c.bias * c.bias).abs() < 1e-15);
        assert!(c.coverage == 0.0 || c.coverage == 1.0);
    }
}

#[test]
fn reports_round_trip_and_write_tables() {
    let spec = DgpSpec::discrete(&fixture("toy_k1.json"));
    let mut cfg = discrete_grid(3);
    cfg.targets = EstimandId::natural(1).into_iter().map(Target::gamma).collect();
    let report = run_grid(&spec, &cfg).unwrap();
    let back = pathshift::simulation::SimReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 5));
    let mut curves = Vec::new();
    report.write_curves(&mut curves).unwrap();
    assert!(String::from_utf8(curves).unwrap().contains("2000"));
}

#[test]
fn covariate_marginals_match_their_laws() {
    let s1 = generate(&DgpSpec::sim1().with_seed(2), 40_000).unwrap();
    let s2 = generate(&DgpSpec::sim2().with_seed(2), 40_000).unwrap();
    let m1 = s1.x().column(0).iter().sum::<f64>() / s1.n() as f64;
    let m2 = s2.x().column(0).iter().sum::<f64>() / s2.n() as f64;
    assert!((m1 - 1.0).abs() < 0.02, "{m1}");
    assert!((m2 - 0.5).abs() < 0.01, "{m2}");
    assert_eq!(s1.k(), 4);
    assert_eq!(s2.x().ncols(), 4);
}

#[test]
fn misspecified_covariates_differ_from_the_truth() {
    let frame = generate(&DgpSpec::sim2(), 500).unwrap();
    let alt = misspecify_covariates(&frame).unwrap();
    assert_eq!(alt.x().ncols(), 4);
    assert_eq!(alt.r(), frame.r());
    assert_eq!(alt.y(), frame.y());
    for j in 0..4 {
        let a = alt.x().column(j);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_ne!(a, frame.x().column(j), "column {j}");
    }
}

#[test]
fn discrete_truths_need_no_draws() {
    let d = fixture("toy_k2.json");
    let targets = [Target::rho(EstimandId::Mediator(1)), Target::gamma(EstimandId::Adv)];
    let t = compute_truths(&DgpSpec::discrete(&d), &targets, OutcomeScale::Raw, 0, 0).unwrap();
    let dis: f64 = d.enumerate_gamma(EstimandId::Dis).unwrap();
    let m1: f64 = d.enumerate_gamma(EstimandId::Mediator(1)).unwrap();
    assert!((t[0].value - (m1 - dis)).abs() < 1e-14);
    assert_eq!(t[1].se, 0.0);
}
