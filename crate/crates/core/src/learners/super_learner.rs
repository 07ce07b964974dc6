use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::folds::{split, stratified_folds};
use crate::linalg::Matrix;
use crate::simplex::{minimize_quadratic, minimize_smooth};

use super::{
    check_inputs, log_loss, response_for, training_loss, FeaturePolicy, FittedModel, LearnerKind,
    LearnerSpec, Predict, Task, TrainingMeta,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StackLoss {
    #[default]
    SquaredError,
    /// Only meaningful for classification; falls back to squared error
    /// otherwise.
    LogLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperLearnerConfig {
    pub candidates: Vec<LearnerSpec>,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    #[serde(default)]
    pub loss: StackLoss,
    #[serde(default = "default_tol")]
    pub weight_solver_tol: f64,
}

fn default_folds() -> usize {
    5
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for SuperLearnerConfig {
    fn default() -> Self {
        SuperLearnerConfig {
            candidates: vec![
                LearnerSpec::new(LearnerKind::Mean),
                LearnerSpec::new(LearnerKind::Linear),
                LearnerSpec::new(LearnerKind::Linear).with_features(FeaturePolicy::Quadratic),
                LearnerSpec::new(LearnerKind::BoostedStumps {
                    rounds: 150,
                    shrinkage: 0.1,
                }),
            ],
            cv_folds: default_folds(),
            loss: StackLoss::SquaredError,
            weight_solver_tol: default_tol(),
        }
    }
}

impl SuperLearnerConfig {
    pub fn new(candidates: Vec<LearnerSpec>) -> Self {
        SuperLearnerConfig {
            candidates,
            ..SuperLearnerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidLearner("super learner needs candidates".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidLearner("super learner needs cv_folds ≥ 2".into()));
        }
        if !(self.weight_solver_tol > 0.0) {
            return Err(Error::InvalidLearner("weight_solver_tol must be positive".into()));
        }
        self.candidates.iter().try_for_each(LearnerSpec::validate)
    }
}

/// Super-learner fit with its cross-validation diagnostics.
#[derive(Debug, Clone)]
pub struct SuperLearnerFit {
    pub model: FittedModel,
    /// Labels of the candidates that survived cross-validation.
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
    /// Cross-validated loss of each surviving candidate.
    pub cv_loss: Vec<f64>,
    /// Cross-validated loss of the weighted combination.
    pub combined_cv_loss: f64,
    pub dropped: Vec<String>,
    /// Out-of-fold predictions, one column per surviving candidate.
    pub cv_predictions: Matrix,
}

#[derive(Debug)]
struct Ensemble {
    members: Vec<(f64, FittedModel)>,
}

impl Predict for Ensemble {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.nrows()];
        for (w, m) in &self.members {
            for (o, p) in out.iter_mut().zip(m.predict(x)?) {
                *o += w * p;
            }
        }
        Ok(out)
    }
}

fn stack_loss(y: &[f64], pred: &[f64], loss: StackLoss) -> f64 {
    let n = y.len() as f64;
    match loss {
        StackLoss::SquaredError => {
            y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n
        }
        StackLoss::LogLoss => y.iter().zip(pred).map(|(&a, &p)| log_loss(a, p)).sum::<f64>() / n,
    }
}

fn combine(z: &Matrix, w: &[f64]) -> Vec<f64> {
    (0..z.nrows())
        .map(|i| z.row(i).iter().zip(w).map(|(a, b)| a * b).sum())
        .collect()
}

/// Convex stacking of the candidates by V-fold cross-validation. Folds are
/// stratified by class for classification targets. Candidates that fail on
/// any fold are dropped with a warning.
pub fn fit_super_learner(
    cfg: &SuperLearnerConfig,
    x: &Matrix,
    y: &[f64],
    task: Task,
    seed: u64,
) -> Result<SuperLearnerFit> {
    cfg.validate()?;
    check_inputs(x, y, task)?;
    let n = y.len();
    if n < cfg.cv_folds {
        return Err(Error::LearnerFailed(format!(
            "super learner needs at least {} rows, got {n}",
            cfg.cv_folds
        )));
    }
    let loss = match task {
        Task::Classification => cfg.loss,
        Task::Regression => StackLoss::SquaredError,
    };
    let strata: Vec<u8> = match task {
        Task::Classification => y.iter().map(|&v| v as u8).collect(),
        Task::Regression => vec![0; n],
    };
    let fold = stratified_folds(&strata, cfg.cv_folds, seed);
    let splits: Vec<(Vec<usize>, Vec<usize>)> =
        (0..cfg.cv_folds).map(|f| split(&fold, f)).collect();

    let cv: Vec<Result<Vec<f64>>> = cfg
        .candidates
        .par_iter()
        .map(|spec| {
            let mut pred = vec![0.0; n];
            for (train, test) in &splits {
                let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                let m = spec.fit(&x.select_rows(train), &ytr, task)?;
                for (&i, p) in test.iter().zip(m.predict(&x.select_rows(test))?) {
                    pred[i] = p;
                }
            }
            Ok(pred)
        })
        .collect();

    let mut survivors = Vec::new();
    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    for (spec, res) in cfg.candidates.iter().zip(cv) {
        match res {
            Ok(pred) => {
                survivors.push(*spec);
                columns.push(pred);
            }
            Err(e) => {
                log::warn!("super learner drops candidate {}: {e}", spec.label());
                dropped.push(spec.label());
            }
        }
    }
    if survivors.is_empty() {
        return Err(Error::LearnerFailed(
            "every super-learner candidate failed".into(),
        ));
    }
    let j = survivors.len();
    let z = Matrix::from_columns(n, &columns)?;
    let cv_loss: Vec<f64> = columns.iter().map(|c| stack_loss(y, c, loss)).collect();
    let best = (0..j)
        .min_by(|&a, &b| cv_loss[a].total_cmp(&cv_loss[b]))
        .expect("non-empty");

    let mut weights = match loss {
        StackLoss::SquaredError => {
            let mut q = vec![0.0; j * j];
            let mut b = vec![0.0; j];
            for i in 0..n {
                let row = z.row(i);
                for a in 0..j {
                    b[a] += row[a] * y[i];
                    for c in a..j {
                        q[a * j + c] += row[a] * row[c];
                    }
                }
            }
            for a in 0..j {
                b[a] /= n as f64;
                for c in a..j {
                    q[a * j + c] /= n as f64;
                    q[c * j + a] = q[a * j + c];
                }
            }
            minimize_quadratic(&q, &b, cfg.weight_solver_tol, 10_000).weights
        }
        StackLoss::LogLoss => {
            let mut start = vec![0.0; j];
            start[best] = 1.0;
            let f = |w: &[f64]| stack_loss(y, &combine(&z, w), StackLoss::LogLoss);
            let grad = |w: &[f64]| {
                let p = combine(&z, w);
                let mut g = vec![0.0; j];
                for i in 0..n {
                    let pi = p[i].clamp(1e-15, 1.0 - 1e-15);
                    let d = (pi - y[i]) / (pi * (1.0 - pi));
                    for (ga, za) in g.iter_mut().zip(z.row(i)) {
                        *ga += d * za / n as f64;
                    }
                }
                g
            };
            minimize_smooth(f, grad, start, cfg.weight_solver_tol, 5_000).weights
        }
    };
    let mut combined_cv_loss = stack_loss(y, &combine(&z, &weights), loss);
    if !(combined_cv_loss <= cv_loss[best]) {
        weights = vec![0.0; j];
        weights[best] = 1.0;
        combined_cv_loss = cv_loss[best];
    }

    let members = survivors
        .iter()
        .zip(&weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(spec, &w)| Ok((w, spec.fit(x, y, task)?)))
        .collect::<Result<Vec<_>>>()?;
    let ensemble = Ensemble { members };
    let fitted = ensemble.predict(x)?;
    let meta = TrainingMeta {
        loss: training_loss(y, &fitted, task),
        iterations: cfg.cv_folds,
        regularized: false,
        notes: dropped.iter().map(|d| format!("dropped {d}")).collect(),
    };
    Ok(SuperLearnerFit {
        model: FittedModel::new(ensemble, response_for(task), meta),
        labels: survivors.iter().map(LearnerSpec::label).collect(),
        weights,
        cv_loss,
        combined_cv_loss,
        dropped,
        cv_predictions: z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(kind: LearnerKind) -> LearnerSpec {
        LearnerSpec::new(kind)
    }

    #[test]
    fn single_candidate_gets_full_weight() {
        let x = Matrix::from_rows(&(0..10).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap();
        let y: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        let cfg = SuperLearnerConfig::new(vec![spec(LearnerKind::Mean)]);
        let fit = fit_super_learner(&cfg, &x, &y, Task::Regression, 1).unwrap();
        assert_eq!(fit.weights, vec![1.0]);
    }

    #[test]
    fn exact_linear_data_selects_linear() {
        let x = Matrix::from_rows(&(0..50).map(|i| vec![i as f64 / 7.0]).collect::<Vec<_>>())
            .unwrap();
        let y: Vec<f64> = (0..50).map(|i| 1.0 + 2.0 * i as f64 / 7.0).collect();
        let cfg = SuperLearnerConfig::new(vec![spec(LearnerKind::Mean), spec(LearnerKind::Linear)]);
        let fit = fit_super_learner(&cfg, &x, &y, Task::Regression, 1).unwrap();
        assert!(fit.weights[1] >= 0.99, "{:?}", fit.weights);
    }

    #[test]
    fn overfit_candidate_does_not_hurt_the_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
            .collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let cfg = SuperLearnerConfig::new(vec![
            spec(LearnerKind::Mean),
            spec(LearnerKind::Linear).with_features(FeaturePolicy::PairwiseInteractions),
        ]);
        let fit = fit_super_learner(&cfg, &x, &y, Task::Regression, 9).unwrap();
        let min = fit.cv_loss.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(fit.combined_cv_loss <= min + 1e-10);
        assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn log_loss_stacking_for_classification() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random::<f64>()]).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| f64::from(rng.random::<f64>() < 0.2 + 0.6 * r[0]))
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let mut cfg = SuperLearnerConfig::new(vec![
            spec(LearnerKind::Mean),
            spec(LearnerKind::Linear),
            spec(LearnerKind::Knn { k: 15 }),
        ]);
        cfg.loss = StackLoss::LogLoss;
        let fit = fit_super_learner(&cfg, &x, &y, Task::Classification, 2).unwrap();
        let min = fit.cv_loss.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(fit.combined_cv_loss <= min + 1e-10);
        assert!(fit.weights.iter().all(|&w| w >= 0.0));
        let p = fit.model.predict(&x).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn failing_candidates_are_dropped() {
        let x = Matrix::from_rows(&(0..10).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let cfg = SuperLearnerConfig::new(vec![spec(LearnerKind::Logistic), spec(LearnerKind::Mean)]);
        let fit = fit_super_learner(&cfg, &x, &y, Task::Regression, 1).unwrap();
        assert_eq!(fit.dropped.len(), 1);
        let cfg = SuperLearnerConfig::new(vec![spec(LearnerKind::Logistic)]);
        assert!(fit_super_learner(&cfg, &x, &y, Task::Regression, 1).is_err());
    }
}
