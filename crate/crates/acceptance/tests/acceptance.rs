//! Acceptance suite. Prints one PASS/FAIL line per criterion, with the
//! numbers behind it indented underneath, and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pathshift::data::{build_frame, load_csv, one_hot, GroupRole, OutcomeRole, OutcomeScale, RoleSpec};
use pathshift::decomposition::{
    decompose, estimate_gammas, ComponentLabel, ComponentScale, DecompositionConfig, DecompositionKind,
    DecompositionReport, ReportScale,
};
use pathshift::estimand::EstimandId;
use pathshift::estimators::{general_summands, summands};
use pathshift::learners::{fit_super_learner, fit_two_part, Learner, LearnerKind, SuperLearnerConfig, Task};
use pathshift::linalg::Matrix;
use pathshift::nuisance::{NuisanceConfig, NuisanceFitter, Routing};
use pathshift::oracle::DiscreteDgp;
use pathshift::simulation::{
    compute_truths, condition_count, generate, run_grid_with_truths, table1_methods, DgpSpec, GridConfig, Method,
    Misspecification, SimReport, Target, Truth,
};

const REPS: usize = 500;
const TRUTH_DRAWS: usize = 10_000_000;
const SPEC_SEED: u64 = 0;
const TRUTH_SEED: u64 = 1;

struct Outcome {
    pass: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { pass: true, details: Vec::new() }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.details.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, line: String) {
        self.details.push(format!("     {line}"));
    }
}

fn crates() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("..")
}

fn fixture(name: &str) -> DiscreteDgp {
    DiscreteDgp::load(crates().join("core/fixtures").join(name)).unwrap()
}

fn sim2_gammas() -> Vec<Target> {
    [EstimandId::Direct]
        .into_iter()
        .chain((1..=4).map(EstimandId::Mediator))
        .map(Target::gamma)
        .collect()
}

fn sim2_truths() -> Vec<Truth> {
    compute_truths(&DgpSpec::sim2(), &sim2_gammas(), OutcomeScale::Raw, TRUTH_DRAWS, TRUTH_SEED).unwrap()
}

fn criterion_1() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    for name in ["toy_k1.json", "toy_k2.json", "toy_k4.json"] {
        let d = fixture(name);
        let report = d.check(1_000_000, 7).unwrap();
        let gap = report.max_exact_gap();
        let z = report.max_mc_z().unwrap();
        o.check(gap < 1e-8, format!("{name} (K = {}): max |Δ| = {gap:.2e}", d.k()));
        o.check(z <= 4.0, format!("{name}: max cascade MC z = {z:.2} at N = 1e6"));
    }
    let t = start.elapsed();
    o.check(t < Duration::from_secs(120), format!("runtime {t:.1?}"));
    o
}

fn sim2_grid(truths: &[Truth]) -> SimReport {
    let cfg = GridConfig {
        targets: sim2_gammas(),
        n_list: vec![1000, 2000, 4000, 8000],
        reps: REPS,
        methods: vec![
            Method::glm("correct", Misspecification::None),
            Method::glm("all_misspecified", Misspecification::All),
        ],
        scale: OutcomeScale::Raw,
        truth_draws: TRUTH_DRAWS,
        truth_seed: TRUTH_SEED,
        alpha: 0.05,
    };
    run_grid_with_truths(&DgpSpec::sim2().with_seed(SPEC_SEED), &cfg, truths).unwrap()
}

fn criterion_2(report: &SimReport) -> Outcome {
    let mut o = Outcome::new();
    for t in &report.truths {
        o.note(format!("truth {} = {:.6} (MC se {:.1e})", t.target, t.value, t.se));
    }
    for target in sim2_gammas() {
        let label = target.to_string();
        let c = report.cell(&label, 8000, "correct").unwrap();
        o.check(c.failures == 0, format!("{label}: {} failed replicates", c.failures));
        o.check(c.bias.abs() <= 0.01, format!("{label}: bias {:+.5}", c.bias));
        o.check(
            (0.91..=0.98).contains(&c.coverage),
            format!("{label}: coverage {:.3} (sd {:.4}, mean se {:.4})", c.coverage, c.sd, c.mean_se),
        );
    }
    o
}

fn criterion_3(report: &SimReport) -> Outcome {
    let mut o = Outcome::new();
    let mut degraded = 0;
    for target in sim2_gammas() {
        let label = target.to_string();
        let at = |n, m| report.cell(&label, n, m).unwrap().sqrt_n_bias.abs();
        let (c1, c8, m8) = (at(1000, "correct"), at(8000, "correct"), at(8000, "all_misspecified"));
        let mc = report.cell(&label, 8000, "correct").unwrap().sd / (REPS as f64).sqrt() * 8000f64.sqrt();
        o.check(
            c8 <= 1.5 * c1,
            format!("{label}: correct √n|bias| {c1:.3} at n = 1000, {c8:.3} at n = 8000 (MC se ≈ {mc:.3})"),
        );
        if m8 >= 2.0 * c8 {
            degraded += 1;
        }
        o.note(format!("{label}: misspecified √n|bias| at n = 8000 is {m8:.3}"));
    }
    o.check(degraded >= 3, format!("{degraded} of 5 estimands degrade at least 2× under misspecification"));
    o
}

fn criterion_4(truths: &[Truth]) -> Outcome {
    let mut o = Outcome::new();
    let cfg = GridConfig {
        targets: sim2_gammas(),
        n_list: vec![8000],
        reps: 300,
        methods: table1_methods(),
        scale: OutcomeScale::Raw,
        truth_draws: TRUTH_DRAWS,
        truth_seed: TRUTH_SEED,
        alpha: 0.05,
    };
    let report = run_grid_with_truths(&DgpSpec::sim2().with_seed(SPEC_SEED), &cfg, truths).unwrap();
    for target in sim2_gammas() {
        let label = target.to_string();
        let Target::Gamma { estimand } = target else { unreachable!() };
        let worst = report.cell(&label, 8000, "all_misspecified").unwrap().bias.abs();
        let bound = f64::max(0.015, worst / 3.0);
        for c in 1..=condition_count(estimand) {
            let cell = report.cell(&label, 8000, &format!("condition_{c}")).unwrap();
            o.check(
                cell.bias.abs() <= bound && cell.failures == 0,
                format!("{label} condition {c}: bias {:+.5} (bound {bound:.4})", cell.bias),
            );
        }
        o.note(format!("{label}: all-misspecified bias {worst:.5}"));
    }
    o
}

fn criterion_5() -> Outcome {
    let mut o = Outcome::new();
    let target = Target::rho(EstimandId::Mediator(1));
    let truths = compute_truths(&DgpSpec::sim1(), &[target], OutcomeScale::LogPositive, TRUTH_DRAWS, TRUTH_SEED).unwrap();
    let cfg = GridConfig {
        targets: vec![target],
        n_list: vec![4000],
        reps: REPS,
        methods: vec![Method::new(
            "super_learner",
            NuisanceConfig::with_learner(Learner::default()),
            Misspecification::None,
        )],
        scale: OutcomeScale::LogPositive,
        truth_draws: TRUTH_DRAWS,
        truth_seed: TRUTH_SEED,
        alpha: 0.05,
    };
    let report = run_grid_with_truths(&DgpSpec::sim1().with_seed(SPEC_SEED), &cfg, &truths).unwrap();
    let c = report.cell(&target.to_string(), 4000, "super_learner").unwrap();
    o.note(format!("truth {:.5} (MC se {:.1e}), sd {:.4}, mean se {:.4}", c.truth, truths[0].se, c.sd, c.mean_se));
    o.check(c.failures == 0, format!("{} failed replicates", c.failures));
    o.check(c.bias.abs() <= 0.01, format!("bias {:+.5}", c.bias));
    o.check((0.869..=0.989).contains(&c.coverage), format!("coverage {:.3}", c.coverage));
    o
}

fn glm() -> Learner {
    Learner::base(LearnerKind::Linear)
}

fn criterion_6() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    let mut seq_gap: f64 = 0.0;
    let mut direct_same = true;
    let mut closed_gap: f64 = 0.0;
    let mut eif_mean: f64 = 0.0;
    for (name, k) in [("toy_k1.json", 1), ("toy_k2.json", 2), ("toy_k4.json", 4)] {
        let frame = fixture(name).sample(1500, rng.random()).unwrap();
        let cfg = DecompositionConfig {
            nuisance: NuisanceConfig::with_learner(glm()),
            kind: DecompositionKind::Both,
            ..DecompositionConfig::default()
        };
        let seq = decompose(&frame, &cfg).unwrap().sequential.unwrap();
        let total = seq.iter().find(|c| c.label == ComponentLabel::Total).unwrap().point;
        let sum: f64 = seq.iter().filter(|c| c.label != ComponentLabel::Total).map(|c| c.point).sum();
        seq_gap = seq_gap.max((sum - total).abs());

        let table = estimate_gammas(&frame, &cfg).unwrap();
        let direct = table.get(EstimandId::Direct).unwrap();
        let last = table.get(EstimandId::Sequential(k)).unwrap();
        direct_same &= direct.point.to_bits() == last.point.to_bits() && direct.eif == last.eif;

        let mut fitter = NuisanceFitter::new(&frame, &cfg.nuisance).unwrap();
        for g in &table.estimates {
            let scale = g.eif.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            eif_mean = eif_mean.max((g.eif.iter().sum::<f64>() / g.n as f64).abs() / scale);
            let q = fitter.fit(g.estimand, &Routing::correct()).unwrap();
            let a = summands(frame.r(), frame.y(), &q).unwrap();
            let b = general_summands(frame.r(), frame.y(), &q).unwrap();
            for (x, y) in a.iter().zip(&b) {
                closed_gap = closed_gap.max((x - y).abs() / (1.0 + x.abs()));
            }
        }
    }
    o.check(seq_gap < 1e-12, format!("sequential components sum to the total within {seq_gap:.1e}"));
    o.check(direct_same, "last sequential mean is bitwise the direct mean".into());
    o.check(closed_gap < 1e-12, format!("closed forms vs general form: max relative gap {closed_gap:.1e}"));
    o.check(eif_mean < 1e-10, format!("centered influence values: max |mean|/scale {eif_mean:.1e}"));

    let rows: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| if rng.random::<f64>() < 0.3 + 0.4 * r[0] { 0.0 } else { (1.0 + r[1]) * 2.0 })
        .collect();
    let (fitted, parts) = fit_two_part(&x, &y, None, &glm(), &glm(), 0).unwrap();
    let (p, m) = parts.predict_parts(&x).unwrap();
    let joint = fitted.predict(&x).unwrap();
    let tp_gap = (0..y.len()).map(|i| (joint[i] - p[i] * m[i]).abs()).fold(0.0, f64::max);
    o.check(tp_gap <= 1e-12, format!("two-part prediction vs product of parts: {tp_gap:.1e}"));

    let fit = fit_super_learner(&SuperLearnerConfig::default(), &x, &y, Task::Regression, 6).unwrap();
    let total: f64 = fit.weights.iter().sum();
    let on_simplex = (total - 1.0).abs() < 1e-9 && fit.weights.iter().all(|&w| w >= 0.0);
    let best_vertex = fit.cv_loss.iter().copied().fold(f64::INFINITY, f64::min);
    o.check(on_simplex, format!("super learner weights {:?}", fit.weights));
    o.check(
        fit.combined_cv_loss <= best_vertex + 1e-12,
        format!("combined CV loss {:.6} vs best candidate {best_vertex:.6}", fit.combined_cv_loss),
    );
    let t = start.elapsed();
    o.check(t < Duration::from_secs(60), format!("runtime {t:.1?}"));
    o.note("randomized versions of these identities run as property tests".into());
    o
}

fn criterion_7() -> Outcome {
    let mut o = Outcome::new();
    let frame = generate(&DgpSpec::sim2_log().with_seed(SPEC_SEED), 2000)
        .unwrap()
        .rescaled(OutcomeScale::LogPositive)
        .unwrap();
    let cfg = DecompositionConfig {
        nuisance: NuisanceConfig::with_learner(glm()),
        scale: ReportScale::Geometric,
        kind: DecompositionKind::Natural,
        ..DecompositionConfig::default()
    };
    let base = decompose(&frame, &cfg).unwrap().natural.unwrap();
    let mut draws: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = frame.n();
    for _ in 0..200 {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let boot = frame.select_rows(&idx).unwrap();
        for c in decompose(&boot, &cfg).unwrap().natural.unwrap() {
            draws.entry(c.label.to_string()).or_default().push(c.point);
        }
    }
    for c in &base {
        assert_eq!(c.scale, ComponentScale::GeometricRatio);
        let v = &draws[&c.label.to_string()];
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        let rel = (c.se - sd).abs() / sd;
        o.check(
            rel <= 0.15,
            format!("{}: ratio {:.4}, analytic se {:.5}, bootstrap se {sd:.5} ({:+.1}%)", c.label, c.point, c.se, 100.0 * (c.se - sd) / sd),
        );
    }
    o
}

fn criterion_8() -> Outcome {
    let mut o = Outcome::new();
    let path = crates().join("cli/tests/fixtures/meps_like.csv");
    let ds = one_hot(&load_csv(&path, &[-1.0, -7.0, -8.0, -9.0]).unwrap(), "REGION").unwrap();
    let region: Vec<String> = ds.column_names().filter(|c| c.starts_with("REGION=")).map(String::from).collect();
    let mut covariates: Vec<String> = ["AGE", "SEX", "MARRY", "POVCAT"].map(String::from).to_vec();
    covariates.extend(region);
    let blocks = [
        vec!["INCOME", "EDUC", "EMPLOY"],
        vec!["INSURED"],
        vec!["SMOKE", "PHYACT"],
        vec!["BMI", "PCS", "MCS", "DIABETES"],
    ];
    let cfg = DecompositionConfig {
        scale: ReportScale::Geometric,
        kind: DecompositionKind::Both,
        ..DecompositionConfig::default()
    };
    for reference in ["Hispanic", "Black", "Asian"] {
        let roles = RoleSpec {
            covariates: covariates.clone(),
            group: GroupRole { name: "RACE".into(), reference: reference.into(), comparison: "White".into() },
            mediators: blocks.iter().map(|b| b.iter().map(|s| s.to_string()).collect()).collect(),
            outcome: OutcomeRole { name: "TOTEXP".into(), scale: OutcomeScale::LogPositive },
        };
        let frame = build_frame(&ds, &roles).unwrap();
        let report = decompose(&frame, &cfg).unwrap();
        let natural = report.natural.as_ref().unwrap();
        let sequential = report.sequential.as_ref().unwrap();
        let mut want: Vec<ComponentLabel> = (1..=4).map(ComponentLabel::Mediator).collect();
        want.extend([ComponentLabel::OutcomeAttributed, ComponentLabel::Total]);
        let labelled = want.iter().all(|l| natural.iter().any(|c| c.label == *l)) && sequential.len() == 6;
        let finite = natural
            .iter()
            .chain(sequential)
            .all(|c| c.point.is_finite() && c.se.is_finite() && c.ci_lo <= c.point && c.point <= c.ci_hi);
        let total = natural.iter().find(|c| c.label == ComponentLabel::Total).unwrap();
        let round_trip = DecompositionReport::from_json(&report.to_json().unwrap()).unwrap() == report;
        o.check(
            labelled && finite,
            format!(
                "White vs {reference}: n = {}/{}, ρ_total {:.3} ({:.3}, {:.3})",
                report.meta.n_comparison, report.meta.n_reference, total.point, total.ci_lo, total.ci_hi
            ),
        );
        o.check(round_trip, format!("White vs {reference}: JSON report round-trips"));
    }
    o.note("synthetic MEPS-shaped CSV; published-table values are not targets".into());
    o
}

/// `ACCEPTANCE_ONLY=2,3` restricts the run to the listed criteria.
fn selected() -> Vec<usize> {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(v) => v.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => (1..=8).collect(),
    }
}

fn main() {
    let only = selected();
    let mut failed = 0;
    let mut report = |n: usize, title: &str, f: &mut dyn FnMut() -> Outcome| {
        if !only.contains(&n) {
            return;
        }
        let start = Instant::now();
        let o = f();
        let mut out = std::io::stdout().lock();
        writeln!(out, "criterion {n}: {} {title} [{:.1?}]", if o.pass { "PASS" } else { "FAIL" }, start.elapsed()).unwrap();
        for d in &o.details {
            writeln!(out, "    {d}").unwrap();
        }
        out.flush().unwrap();
        if !o.pass {
            failed += 1;
        }
    };
    report(1, "oracle identity on discrete fixtures", &mut criterion_1);
    if [2, 3, 4].iter().any(|c| only.contains(c)) {
        let truths = sim2_truths();
        let grid = if only.contains(&2) || only.contains(&3) { Some(sim2_grid(&truths)) } else { None };
        if let Some(grid) = &grid {
            report(2, "Sim-2 consistency and coverage at n = 8000", &mut || criterion_2(grid));
            report(3, "Sim-2 root-n behavior", &mut || criterion_3(grid));
        }
        report(4, "Sim-2 multiply robust conditions", &mut || criterion_4(&truths));
    }
    report(5, "Sim-1 super learner, ρ for mediator 1", &mut criterion_5);
    report(6, "structural identities", &mut criterion_6);
    report(7, "delta-method ratio SE vs bootstrap", &mut criterion_7);
    report(8, "MEPS-shaped CSV end to end", &mut criterion_8);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all selected acceptance criteria passed");
}
