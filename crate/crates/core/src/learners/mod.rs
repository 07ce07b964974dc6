//! Supervised learners for the nuisance regressions.
//!
//! Every learner produces an immutable [`FittedModel`]. Binary targets use the
//! [`Task::Classification`] variant, under which `linear` means logistic
//! regression and predictions are probabilities.

mod features;
mod glm;
mod knn;
mod saturated;
mod stumps;
mod super_learner;
mod two_part;

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use features::{expand, Expansion, FeaturePolicy};
pub use glm::{fit_linear, fit_logistic, fit_logistic_penalized};
pub use knn::fit_knn;
pub use saturated::fit_saturated;
pub use stumps::fit_boosted_stumps;
pub use super_learner::{fit_super_learner, StackLoss, SuperLearnerConfig, SuperLearnerFit};
pub use two_part::{fit_two_part, TwoPartModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseType {
    Continuous,
    Probability,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Mean training loss (squared error or log loss).
    pub loss: f64,
    pub iterations: usize,
    /// Set when a separation or singularity fallback was used.
    pub regularized: bool,
    pub notes: Vec<String>,
}

/// Prediction half of a fitted learner.
pub trait Predict: Debug + Send + Sync {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>>;
}

/// Shareable fitted model.
#[derive(Debug, Clone)]
pub struct FittedModel {
    inner: Arc<dyn Predict>,
    response: ResponseType,
    meta: TrainingMeta,
}

impl FittedModel {
    pub fn new(inner: impl Predict + 'static, response: ResponseType, meta: TrainingMeta) -> Self {
        FittedModel {
            inner: Arc::new(inner),
            response,
            meta,
        }
    }

    pub fn constant(value: f64, response: ResponseType) -> Self {
        FittedModel::new(Constant(value), response, TrainingMeta::default())
    }

    /// Predictions for each row; probability models are clamped to `[0, 1]`.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let mut p = self.inner.predict(x)?;
        if self.response == ResponseType::Probability {
            p.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model predictions".into()));
        }
        Ok(p)
    }

    pub fn response_type(&self) -> ResponseType {
        self.response
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Constant(pub f64);

impl Predict for Constant {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(vec![self.0; x.nrows()])
    }
}

/// Base learner families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    Mean,
    /// Least squares, or logistic regression for classification.
    Linear,
    Logistic,
    Ridge {
        lambda: f64,
    },
    BoostedStumps {
        rounds: usize,
        shrinkage: f64,
    },
    Knn {
        k: usize,
    },
}

/// A base learner with its feature expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    #[serde(flatten)]
    pub kind: LearnerKind,
    #[serde(default)]
    pub features: FeaturePolicy,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        LearnerSpec {
            kind,
            features: FeaturePolicy::MainEffects,
        }
    }

    pub fn with_features(mut self, features: FeaturePolicy) -> Self {
        self.features = features;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidLearner(m.to_string()));
        match self.kind {
            LearnerKind::Ridge { lambda } if !(lambda >= 0.0) => bad("ridge lambda must be ≥ 0"),
            LearnerKind::BoostedStumps { rounds, .. } if rounds == 0 => {
                bad("boosted_stumps needs rounds ≥ 1")
            }
            LearnerKind::BoostedStumps { shrinkage, .. }
                if !(shrinkage > 0.0 && shrinkage <= 1.0) =>
            {
                bad("boosted_stumps shrinkage must lie in (0, 1]")
            }
            LearnerKind::Knn { k } if k == 0 => bad("knn needs k ≥ 1"),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        let base = match self.kind {
            LearnerKind::Mean => "mean".to_string(),
            LearnerKind::Linear => "linear".to_string(),
            LearnerKind::Logistic => "logistic".to_string(),
            LearnerKind::Ridge { lambda } => format!("ridge({lambda})"),
            LearnerKind::BoostedStumps { rounds, shrinkage } => {
                format!("stumps({rounds},{shrinkage})")
            }
            LearnerKind::Knn { k } => format!("knn({k})"),
        };
        match self.features {
            FeaturePolicy::MainEffects => base,
            FeaturePolicy::PairwiseInteractions => format!("{base}+pairwise"),
            FeaturePolicy::Quadratic => format!("{base}+quadratic"),
        }
    }

    pub fn fit(&self, x: &Matrix, y: &[f64], task: Task) -> Result<FittedModel> {
        self.validate()?;
        check_inputs(x, y, task)?;
        let expansion = Expansion::fit(x, self.features);
        let inner = expansion.apply(x);
        let model = match (self.kind, task) {
            (LearnerKind::Mean, _) => {
                let m = y.iter().sum::<f64>() / y.len() as f64;
                let resp = response_for(task);
                let loss = training_loss(y, &vec![m; y.len()], task);
                return Ok(FittedModel::new(
                    Constant(m),
                    resp,
                    TrainingMeta {
                        loss,
                        ..TrainingMeta::default()
                    },
                ));
            }
            (LearnerKind::Linear, Task::Regression) => fit_linear(&inner, y, 0.0, true)?,
            (LearnerKind::Ridge { lambda }, Task::Regression) => fit_linear(&inner, y, lambda, true)?,
            (LearnerKind::Linear | LearnerKind::Logistic, Task::Classification) => {
                fit_logistic(&inner, y)?
            }
            (LearnerKind::Ridge { lambda }, Task::Classification) => {
                fit_logistic_penalized(&inner, y, lambda)?
            }
            (LearnerKind::Logistic, Task::Regression) => {
                return Err(Error::InvalidLearner(
                    "logistic learner used for a continuous target".into(),
                ))
            }
            (LearnerKind::BoostedStumps { rounds, shrinkage }, _) => {
                fit_boosted_stumps(&inner, y, task, rounds, shrinkage)?
            }
            (LearnerKind::Knn { k }, _) => fit_knn(&inner, y, task, k)?,
        };
        Ok(with_expansion(model, expansion))
    }
}

/// Wraps a model fitted on expanded features so it accepts raw features.
fn with_expansion(model: FittedModel, expansion: Expansion) -> FittedModel {
    if expansion.policy() == FeaturePolicy::MainEffects {
        return model;
    }
    #[derive(Debug)]
    struct Expanded(FittedModel, Expansion);
    impl Predict for Expanded {
        fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
            self.0.predict(&self.1.apply(x))
        }
    }
    let (response, meta) = (model.response, model.meta.clone());
    FittedModel::new(Expanded(model, expansion), response, meta)
}

pub(crate) fn response_for(task: Task) -> ResponseType {
    match task {
        Task::Regression => ResponseType::Continuous,
        Task::Classification => ResponseType::Probability,
    }
}

pub(crate) fn check_inputs(x: &Matrix, y: &[f64], task: Task) -> Result<()> {
    if y.is_empty() {
        return Err(Error::LearnerFailed("no training rows".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} responses",
            x.nrows(),
            y.len()
        )));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("learner inputs".into()));
    }
    if task == Task::Classification && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::LearnerFailed(
            "classification response must be 0/1".into(),
        ));
    }
    Ok(())
}

/// Mean squared error, or mean log loss for classification.
pub fn training_loss(y: &[f64], pred: &[f64], task: Task) -> f64 {
    match task {
        Task::Regression => {
            y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
        }
        Task::Classification => {
            y.iter()
                .zip(pred)
                .map(|(&a, &p)| log_loss(a, p))
                .sum::<f64>()
                / y.len() as f64
        }
    }
}

pub(crate) fn log_loss(y: f64, p: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Any learner the nuisance layer can be configured with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LearnerRepr", into = "LearnerRepr")]
pub enum Learner {
    Base(LearnerSpec),
    SuperLearner(SuperLearnerConfig),
    /// Cell means over the distinct feature rows; only for discrete designs.
    Saturated,
}

impl Learner {
    pub fn base(kind: LearnerKind) -> Self {
        Learner::Base(LearnerSpec::new(kind))
    }

    pub fn label(&self) -> String {
        match self {
            Learner::Base(spec) => spec.label(),
            Learner::SuperLearner(cfg) => format!(
                "super_learner[{}]",
                cfg.candidates.iter().map(LearnerSpec::label).collect::<Vec<_>>().join(", ")
            ),
            Learner::Saturated => "saturated".into(),
        }
    }

    pub fn fit(&self, x: &Matrix, y: &[f64], task: Task, seed: u64) -> Result<FittedModel> {
        match self {
            Learner::Base(spec) => spec.fit(x, y, task),
            Learner::SuperLearner(cfg) => Ok(fit_super_learner(cfg, x, y, task, seed)?.model),
            Learner::Saturated => {
                check_inputs(x, y, task)?;
                fit_saturated(x, y, task)
            }
        }
    }
}

impl Default for Learner {
    fn default() -> Self {
        Learner::SuperLearner(SuperLearnerConfig::default())
    }
}

/// Flat configuration form: `kind = "ridge"`, `lambda = 0.1`, or
/// `kind = "super_learner"` with `candidates = [...]`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LearnerRepr {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<FeaturePolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shrinkage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates: Option<Vec<LearnerSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cv_folds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loss: Option<StackLoss>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_solver_tol: Option<f64>,
}

impl TryFrom<LearnerRepr> for Learner {
    type Error = Error;

    fn try_from(r: LearnerRepr) -> Result<Self> {
        let need = |v: Option<f64>, what: &str| {
            v.ok_or_else(|| Error::InvalidLearner(format!("`{}` requires `{what}`", r.kind)))
        };
        let kind = match r.kind.as_str() {
            "saturated" => return Ok(Learner::Saturated),
            "super_learner" => {
                let d = SuperLearnerConfig::default();
                let cfg = SuperLearnerConfig {
                    candidates: r.candidates.clone().unwrap_or(d.candidates),
                    cv_folds: r.cv_folds.unwrap_or(d.cv_folds),
                    loss: r.loss.unwrap_or(d.loss),
                    weight_solver_tol: r.weight_solver_tol.unwrap_or(d.weight_solver_tol),
                };
                cfg.validate()?;
                return Ok(Learner::SuperLearner(cfg));
            }
            "mean" => LearnerKind::Mean,
            "linear" => LearnerKind::Linear,
            "logistic" => LearnerKind::Logistic,
            "ridge" => LearnerKind::Ridge {
                lambda: need(r.lambda, "lambda")?,
            },
            "boosted_stumps" => LearnerKind::BoostedStumps {
                rounds: r.rounds.unwrap_or(100),
                shrinkage: r.shrinkage.unwrap_or(0.1),
            },
            "knn" => LearnerKind::Knn {
                k: r.k.unwrap_or(10),
            },
            other => return Err(Error::InvalidLearner(format!("unknown learner `{other}`"))),
        };
        let spec = LearnerSpec {
            kind,
            features: r.features.unwrap_or_default(),
        };
        spec.validate()?;
        Ok(Learner::Base(spec))
    }
}

impl From<Learner> for LearnerRepr {
    fn from(l: Learner) -> Self {
        match l {
            Learner::Saturated => LearnerRepr {
                kind: "saturated".into(),
                ..LearnerRepr::default()
            },
            Learner::SuperLearner(cfg) => LearnerRepr {
                kind: "super_learner".into(),
                candidates: Some(cfg.candidates),
                cv_folds: Some(cfg.cv_folds),
                loss: Some(cfg.loss),
                weight_solver_tol: Some(cfg.weight_solver_tol),
                ..LearnerRepr::default()
            },
            Learner::Base(spec) => {
                let mut r = LearnerRepr {
                    features: Some(spec.features),
                    ..LearnerRepr::default()
                };
                r.kind = match spec.kind {
                    LearnerKind::Mean => "mean".into(),
                    LearnerKind::Linear => "linear".into(),
                    LearnerKind::Logistic => "logistic".into(),
                    LearnerKind::Ridge { lambda } => {
                        r.lambda = Some(lambda);
                        "ridge".into()
                    }
                    LearnerKind::BoostedStumps { rounds, shrinkage } => {
                        r.rounds = Some(rounds);
                        r.shrinkage = Some(shrinkage);
                        "boosted_stumps".into()
                    }
                    LearnerKind::Knn { k } => {
                        r.k = Some(k);
                        "knn".into()
                    }
                };
                r
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learner_config_round_trips() {
        let l: Learner = toml::from_str("kind = \"ridge\"\nlambda = 0.1\nfeatures = \"quadratic\"").unwrap();
        assert_eq!(
            l,
            Learner::Base(
                LearnerSpec::new(LearnerKind::Ridge { lambda: 0.1 })
                    .with_features(FeaturePolicy::Quadratic)
            )
        );
        let sl: Learner = toml::from_str(
            "kind = \"super_learner\"\ncv_folds = 3\ncandidates = [{ kind = \"mean\" }, { kind = \"knn\", k = 5 }]",
        )
        .unwrap();
        let back: Learner = serde_json::from_str(&serde_json::to_string(&sl).unwrap()).unwrap();
        assert_eq!(sl, back);
        assert!(toml::from_str::<Learner>("kind = \"ridge\"").is_err());
        assert!(toml::from_str::<Learner>("kind = \"knn\"\nk = 0").is_err());
        assert!(toml::from_str::<Learner>("kind = \"forest\"").is_err());
    }

    #[test]
    fn mean_learner_and_task_checks() {
        let x = Matrix::zeros(4, 1);
        let m = LearnerSpec::new(LearnerKind::Mean)
            .fit(&x, &[1.0, 0.0, 1.0, 0.0], Task::Classification)
            .unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![0.5; 4]);
        assert!(LearnerSpec::new(LearnerKind::Linear)
            .fit(&x, &[0.5, 0.0, 1.0, 0.0], Task::Classification)
            .is_err());
        assert!(LearnerSpec::new(LearnerKind::Logistic)
            .fit(&x, &[0.5, 0.0, 1.0, 0.0], Task::Regression)
            .is_err());
    }
}
