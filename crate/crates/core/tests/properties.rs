use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;

use pathshift::data::OutcomeScale;
use pathshift::decomposition::{decompose, estimate_gammas, ComponentLabel, DecompositionConfig, DecompositionKind};
use pathshift::estimand::EstimandId;
use pathshift::estimators::{estimate, general_summands, summands};
use pathshift::learners::{fit_super_learner, fit_two_part, Learner, LearnerKind, SuperLearnerConfig, Task};
use pathshift::linalg::Matrix;
use pathshift::nuisance::{LevelFit, NuisanceConfig, NuisanceSet};
use pathshift::oracle::DiscreteDgp;
use pathshift::simulation::{compute_truths, run_grid_with_truths, DgpSpec, GridConfig, Method, Misspecification, Target};

fn fixture(name: &str) -> DiscreteDgp {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    DiscreteDgp::load(path).unwrap()
}

fn glm_config(kind: DecompositionKind) -> DecompositionConfig {
    DecompositionConfig {
        nuisance: NuisanceConfig::with_learner(Learner::base(LearnerKind::Linear)),
        kind,
        ..DecompositionConfig::default()
    }
}

/// Random nuisances for `id`, with probabilities kept away from 0 and 1.
fn nuisance_set(id: EstimandId, k: usize, n: usize, draws: &[f64]) -> NuisanceSet {
    let arms = id.arms(k).unwrap();
    let mut at = 0usize;
    let mut next = || {
        let v = draws[at % draws.len()];
        at += 1;
        v
    };
    let prob = |v: f64| 0.05 + 0.9 * v;
    let pi: Vec<f64> = (0..n).map(|_| prob(next())).collect();
    let g: BTreeMap<usize, Vec<f64>> = (1..=k).map(|j| (j, (0..n).map(|_| prob(next())).collect())).collect();
    let levels = arms
        .levels()
        .into_iter()
        .map(|level| LevelFit {
            level,
            values: (0..n).map(|_| 4.0 * next() - 2.0).collect(),
        })
        .collect();
    NuisanceSet {
        estimand: id,
        arms,
        pi,
        g,
        levels,
        delta: 0.0,
        folds: None,
        truncated: BTreeMap::new(),
    }
}

fn estimand_strategy() -> impl Strategy<Value = (usize, EstimandId)> {
    (1usize..=5).prop_flat_map(|k| {
        let mut ids = EstimandId::natural(k);
        ids.extend((1..=k).map(EstimandId::Sequential));
        (Just(k), proptest::sample::select(ids))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn closed_forms_agree_with_the_general_form(
        (k, id) in estimand_strategy(),
        n in 1usize..40,
        draws in prop::collection::vec(0.0f64..1.0, 64..256),
        rbits in prop::collection::vec(any::<bool>(), 40),
        y in prop::collection::vec(-5.0f64..5.0, 40),
    ) {
        let q = nuisance_set(id, k, n, &draws);
        let r: Vec<u8> = rbits[..n].iter().map(|&b| u8::from(b)).collect();
        let y = &y[..n];
        let special = summands(&r, y, &q).unwrap();
        let general = general_summands(&r, y, &q).unwrap();
        for (a, b) in special.iter().zip(&general) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{id}: {a} vs {b}");
        }
    }

    #[test]
    fn influence_values_are_centered(
        (k, id) in estimand_strategy(),
        n in 1usize..40,
        draws in prop::collection::vec(0.0f64..1.0, 64..256),
        rbits in prop::collection::vec(any::<bool>(), 40),
        y in prop::collection::vec(-5.0f64..5.0, 40),
    ) {
        let q = nuisance_set(id, k, n, &draws);
        let r: Vec<u8> = rbits[..n].iter().map(|&b| u8::from(b)).collect();
        let est = estimate(&r, &y[..n], &q).unwrap();
        let scale = est.eif.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mean = est.eif.iter().sum::<f64>() / n as f64;
        prop_assert!(mean.abs() <= 1e-12 * scale);
    }

    #[test]
    fn two_part_prediction_is_the_product_of_its_parts(
        rows in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 20..80),
    ) {
        let x = Matrix::from_rows(&rows.iter().map(|r| vec![r.0, r.1]).collect::<Vec<_>>()).unwrap();
        let y: Vec<f64> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| if r.2 < 0.3 && i % 7 != 0 { 0.0 } else { 1.0 + r.0 + r.2 })
            .collect();
        let glm = Learner::base(LearnerKind::Linear);
        let (fitted, parts) = fit_two_part(&x, &y, None, &glm, &glm, 0).unwrap();
        let (p, m) = parts.predict_parts(&x).unwrap();
        let joint = fitted.predict(&x).unwrap();
        for i in 0..y.len() {
            prop_assert!((joint[i] - p[i] * m[i]).abs() <= 1e-12 * (1.0 + joint[i].abs()));
        }
    }

    #[test]
    fn stacking_weights_lie_on_the_simplex_and_beat_every_candidate(
        rows in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 40..120),
        seed in any::<u64>(),
    ) {
        let x = Matrix::from_rows(&rows.iter().map(|r| vec![r.0, r.1]).collect::<Vec<_>>()).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| r.0 * r.0 + 0.5 * r.1 + 0.3 * r.2).collect();
        let fit = fit_super_learner(&SuperLearnerConfig::default(), &x, &y, Task::Regression, seed).unwrap();
        let total: f64 = fit.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(fit.weights.iter().all(|&w| w >= -1e-12));
        for &l in &fit.cv_loss {
            prop_assert!(fit.combined_cv_loss <= l + 1e-9, "{} > {l}", fit.combined_cv_loss);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sequential_components_add_up_to_the_total(seed in any::<u64>(), n in 200usize..600) {
        let d = fixture("toy_k4.json");
        let frame = d.sample(n, seed).unwrap();
        let report = decompose(&frame, &glm_config(DecompositionKind::Sequential)).unwrap();
        let seq = report.sequential.unwrap();
        let total = seq.iter().find(|c| c.label == ComponentLabel::Total).unwrap().point;
        let sum: f64 = seq.iter().filter(|c| c.label != ComponentLabel::Total).map(|c| c.point).sum();
        prop_assert!((sum - total).abs() < 1e-12, "{sum} vs {total}");
    }

    #[test]
    fn last_sequential_step_is_the_direct_estimate(seed in any::<u64>(), n in 200usize..600) {
        let d = fixture("toy_k2.json");
        let frame = d.sample(n, seed).unwrap();
        let t = estimate_gammas(&frame, &glm_config(DecompositionKind::Both)).unwrap();
        let direct = t.get(EstimandId::Direct).unwrap();
        let last = t.get(EstimandId::Sequential(2)).unwrap();
        prop_assert_eq!(direct.point.to_bits(), last.point.to_bits());
        prop_assert_eq!(&direct.eif, &last.eif);
    }

    #[test]
    fn replication_mse_splits_into_bias_and_variance(seed in 0u64..1000, reps in 2usize..6) {
        let d = fixture("toy_k1.json");
        let spec = DgpSpec::discrete(&d).with_seed(seed);
        let targets: Vec<Target> = EstimandId::natural(1).into_iter().map(Target::gamma).collect();
        let truths = compute_truths(&spec, &targets, OutcomeScale::Raw, 0, 0).unwrap();
        let cfg = GridConfig {
            targets,
            n_list: vec![150],
            reps,
            methods: vec![Method::glm("glm", Misspecification::None)],
            scale: OutcomeScale::Raw,
            truth_draws: 0,
            truth_seed: 0,
            alpha: 0.05,
        };
        let report = run_grid_with_truths(&spec, &cfg, &truths).unwrap();
        for c in &report.cells {
            let m = (c.reps - c.failures) as f64;
            let rhs = c.bias * c.bias + c.sd * c.sd * (m - 1.0) / m;
            prop_assert!((c.mse - rhs).abs() <= 1e-12 * (1.0 + c.mse), "{}: {} vs {rhs}", c.label, c.mse);
        }
    }
}
