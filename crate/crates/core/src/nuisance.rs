//! Nuisance fitting: propensities, mediator propensities and the nested
//! pseudo-outcome regressions, with optional cross-fitting.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::{AnalysisFrame, OutcomeScale};
use crate::error::{Error, Result};
use crate::estimand::{ArmVector, EstimandId, Level};
use crate::folds::{split, stratified_folds};
use crate::learners::{fit_two_part, FittedModel, Learner, Task};
use crate::linalg::Matrix;

pub const DEFAULT_DELTA: f64 = 0.01;

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

/// Learner choices and fitting options for a nuisance collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    /// Used for every regression without a more specific choice.
    #[serde(default)]
    pub learner: Learner,
    /// Overrides `learner` for `π` and the `g_k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propensity_learner: Option<Learner>,
    /// Truncation level for `π` and `g_k`.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Number of cross-fitting folds; `None` or `1` fits in-sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossfit_folds: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            learner: Learner::default(),
            propensity_learner: None,
            delta: DEFAULT_DELTA,
            crossfit_folds: None,
            seed: 0,
        }
    }
}

impl NuisanceConfig {
    pub fn with_learner(learner: Learner) -> Self {
        NuisanceConfig {
            learner,
            ..NuisanceConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta < 0.5) {
            return Err(Error::Config(format!(
                "delta must lie in [0, 0.5), got {}",
                self.delta
            )));
        }
        if self.crossfit_folds == Some(0) {
            return Err(Error::Config("crossfit folds must be ≥ 1".into()));
        }
        Ok(())
    }

    fn propensity(&self) -> &Learner {
        self.propensity_learner.as_ref().unwrap_or(&self.learner)
    }
}

/// A single nuisance regression, used to route it to alternate covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Propensity,
    /// `P(R = 1 | M̄_k, X)`.
    G(usize),
    /// Nested regression on `(X, M̄_b)`.
    Level(usize),
}

/// Roles whose covariates come from the alternate frame.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Routing {
    pub alternate: HashSet<Role>,
}

impl Routing {
    pub fn correct() -> Self {
        Routing::default()
    }

    pub fn of(roles: impl IntoIterator<Item = Role>) -> Self {
        Routing {
            alternate: roles.into_iter().collect(),
        }
    }
}

/// Predictions of one nested regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelFit<T = f64> {
    pub level: Level,
    pub values: Vec<T>,
}

/// Every nuisance prediction an estimand needs, one value per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSet<T = f64> {
    pub estimand: EstimandId,
    pub arms: ArmVector,
    /// `P̂(R = 1 | X)`, truncated.
    pub pi: Vec<T>,
    /// `P̂(R = 1 | M̄_k, X)` for the indices the weights use, truncated.
    pub g: BTreeMap<usize, Vec<T>>,
    /// Nested regressions, top level first; the last one is at `b = 0`.
    pub levels: Vec<LevelFit<T>>,
    pub delta: f64,
    pub folds: Option<Vec<usize>>,
    /// Number of predictions clipped per probability nuisance.
    pub truncated: BTreeMap<String, usize>,
}

impl<T: Copy> NuisanceSet<T> {
    pub fn n(&self) -> usize {
        self.pi.len()
    }

    /// `g_k`, with `g_0 ≡ π`.
    pub fn g(&self, k: usize) -> Result<&[T]> {
        if k == 0 {
            return Ok(&self.pi);
        }
        self.g
            .get(&k)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingNuisance(format!("g_{k} for {}", self.estimand)))
    }

    pub fn level(&self, b: usize) -> Result<&[T]> {
        self.levels
            .iter()
            .find(|l| l.level.b == b)
            .map(|l| l.values.as_slice())
            .ok_or_else(|| {
                Error::MissingNuisance(format!("level {b} regression for {}", self.estimand))
            })
    }

    /// Outcome regression at the top level.
    pub fn mu(&self) -> &[T] {
        &self.levels[0].values
    }

    /// Covariate-only regression at level 0.
    pub fn centering(&self) -> &[T] {
        &self.levels[self.levels.len() - 1].values
    }

    pub fn validate(&self) -> Result<()>
    where
        T: num_traits::Float,
    {
        let n = self.n();
        let all = std::iter::once(&self.pi)
            .chain(self.g.values())
            .chain(self.levels.iter().map(|l| &l.values));
        for v in all {
            if v.len() != n {
                return Err(Error::Dimension("nuisance vectors differ in length".into()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("nuisances for {}", self.estimand)));
            }
        }
        if self.levels.last().map(|l| l.level.b) != Some(0) {
            return Err(Error::MissingNuisance("level-0 regression".into()));
        }
        Ok(())
    }
}

/// splitmix64 finalizer; derives independent sub-seeds.
pub(crate) fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn role_tag(role: Role) -> u64 {
    match role {
        Role::Propensity => 1,
        Role::G(k) => 100 + k as u64,
        Role::Level(b) => 10_000 + b as u64,
    }
}

pub(crate) fn clip(values: &mut [f64], delta: f64) -> usize {
    let mut hits = 0;
    for v in values.iter_mut() {
        let c = v.clamp(delta, 1.0 - delta);
        if c != *v {
            hits += 1;
            *v = c;
        }
    }
    hits
}

/// Fits nuisance sets for one frame, sharing `π` and `g_k` fits across
/// estimands and routes.
pub struct NuisanceFitter<'a> {
    frame: &'a AnalysisFrame,
    alternate: Option<&'a AnalysisFrame>,
    cfg: &'a NuisanceConfig,
    folds: Option<Vec<usize>>,
    splits: Vec<(Vec<usize>, Vec<usize>)>,
    probabilities: HashMap<(Role, bool), (Vec<f64>, usize)>,
}

impl<'a> NuisanceFitter<'a> {
    pub fn new(frame: &'a AnalysisFrame, cfg: &'a NuisanceConfig) -> Result<Self> {
        cfg.validate()?;
        let n = frame.n();
        let (folds, splits) = match cfg.crossfit_folds {
            Some(v) if v >= 2 => {
                if n < 2 * v {
                    return Err(Error::Config(format!(
                        "{v} cross-fitting folds need at least {} rows",
                        2 * v
                    )));
                }
                let fold = stratified_folds(frame.r(), v, mix_seed(cfg.seed, 7));
                let splits: Vec<_> = (0..v).map(|f| split(&fold, f)).collect();
                for (f, (train, _)) in splits.iter().enumerate() {
                    let ones = train.iter().filter(|&&i| frame.r()[i] == 1).count();
                    if ones == 0 || ones == train.len() {
                        return Err(Error::EmptyStratum {
                            arm: u8::from(ones == 0),
                            what: format!("training part of cross-fitting fold {f}"),
                        });
                    }
                }
                (Some(fold), splits)
            }
            _ => {
                let all: Vec<usize> = (0..n).collect();
                (None, vec![(all.clone(), all)])
            }
        };
        Ok(NuisanceFitter {
            frame,
            alternate: None,
            cfg,
            folds,
            splits,
            probabilities: HashMap::new(),
        })
    }

    /// Supplies a frame with the same rows but different covariates, used
    /// for the roles a [`Routing`] marks.
    pub fn with_alternate(mut self, alternate: &'a AnalysisFrame) -> Result<Self> {
        if alternate.n() != self.frame.n() || alternate.r() != self.frame.r() {
            return Err(Error::Dimension(
                "alternate frame must share rows with the analysis frame".into(),
            ));
        }
        self.alternate = Some(alternate);
        Ok(self)
    }

    pub fn folds(&self) -> Option<&[usize]> {
        self.folds.as_deref()
    }

    fn source(&self, role: Role, routing: &Routing) -> Result<(&'a AnalysisFrame, bool)> {
        if routing.alternate.contains(&role) {
            let alt = self.alternate.ok_or_else(|| {
                Error::Config(format!("{role:?} routed to alternate covariates, none given"))
            })?;
            Ok((alt, true))
        } else {
            Ok((self.frame, false))
        }
    }

    fn probability(&mut self, role: Role, routing: &Routing) -> Result<(Vec<f64>, usize)> {
        let (src, alt) = self.source(role, routing)?;
        if let Some(hit) = self.probabilities.get(&(role, alt)) {
            return Ok(hit.clone());
        }
        let b = match role {
            Role::Propensity => 0,
            Role::G(k) => k,
            Role::Level(_) => unreachable!("levels are not probabilities"),
        };
        let x = src.features(b);
        let r: Vec<f64> = self.frame.r().iter().map(|&v| f64::from(v)).collect();
        let mut out = vec![0.0; self.frame.n()];
        for (f, (train, eval)) in self.splits.iter().enumerate() {
            let yt: Vec<f64> = train.iter().map(|&i| r[i]).collect();
            let seed = mix_seed(self.cfg.seed, role_tag(role) ^ ((f as u64) << 32));
            let model = self
                .cfg
                .propensity()
                .fit(&x.select_rows(train), &yt, Task::Classification, seed)?;
            let pred = model.predict(&x.select_rows(eval))?;
            for (&i, p) in eval.iter().zip(pred) {
                out[i] = p;
            }
        }
        let hits = clip(&mut out, self.cfg.delta);
        self.probabilities.insert((role, alt), (out.clone(), hits));
        Ok((out, hits))
    }

    /// Fits every nuisance of `estimand`, routing marked roles to the
    /// alternate covariates.
    pub fn fit(&mut self, estimand: EstimandId, routing: &Routing) -> Result<NuisanceSet> {
        let arms = estimand.arms(self.frame.k())?;
        let mut truncated = BTreeMap::new();
        let (pi, hits) = self.probability(Role::Propensity, routing)?;
        truncated.insert("pi".to_string(), hits);
        let mut g = BTreeMap::new();
        for k in arms.g_indices() {
            let (values, hits) = self.probability(Role::G(k), routing)?;
            truncated.insert(format!("g_{k}"), hits);
            g.insert(k, values);
        }
        let plan = arms.levels();
        let mut levels: Vec<LevelFit> = plan
            .iter()
            .map(|&level| LevelFit {
                level,
                values: vec![0.0; self.frame.n()],
            })
            .collect();
        for (f, (train, eval)) in self.splits.iter().enumerate() {
            let preds = self.chain(&plan, routing, train, eval, f as u64)?;
            for (lf, pred) in levels.iter_mut().zip(preds) {
                for (&i, p) in eval.iter().zip(pred) {
                    lf.values[i] = p;
                }
            }
        }
        let set = NuisanceSet {
            estimand,
            arms,
            pi,
            g,
            levels,
            delta: self.cfg.delta,
            folds: self.folds.clone(),
            truncated,
        };
        set.validate()?;
        Ok(set)
    }

    fn chain(
        &self,
        plan: &[Level],
        routing: &Routing,
        train: &[usize],
        eval: &[usize],
        fold: u64,
    ) -> Result<Vec<Vec<f64>>> {
        let frame = self.frame;
        let in_sample = train.len() == eval.len();
        let mut pseudo: Vec<f64> = train.iter().map(|&i| frame.y()[i]).collect();
        let mut out = Vec::with_capacity(plan.len());
        for (depth, level) in plan.iter().enumerate() {
            let role = Role::Level(level.b);
            let (src, _) = self.source(role, routing)?;
            let x = src.features(level.b);
            let xt = x.select_rows(train);
            let fit_rows: Vec<usize> = (0..train.len())
                .filter(|&p| frame.r()[train[p]] == level.arm)
                .collect();
            if fit_rows.is_empty() {
                return Err(Error::EmptyStratum {
                    arm: level.arm,
                    what: format!("level-{} regression", level.b),
                });
            }
            let seed = mix_seed(self.cfg.seed, role_tag(role) ^ (fold << 32));
            let xfit = xt.select_rows(&fit_rows);
            let yfit: Vec<f64> = fit_rows.iter().map(|&p| pseudo[p]).collect();
            let model = if depth == 0 {
                let positive: Vec<bool> = fit_rows
                    .iter()
                    .map(|&p| frame.positive()[train[p]])
                    .collect();
                fit_outcome(&self.cfg.learner, frame.scale(), &xfit, &yfit, &positive, seed)?
            } else {
                self.cfg.learner.fit(&xfit, &yfit, Task::Regression, seed)?
            };
            let on_train = model.predict(&xt)?;
            let on_eval = if in_sample {
                on_train.clone()
            } else {
                model.predict(&x.select_rows(eval))?
            };
            pseudo = on_train;
            out.push(on_eval);
        }
        Ok(out)
    }
}

/// Outcome regression honoring the outcome scale: a two-part model for
/// `log_positive`, a classifier for the positive indicator.
fn fit_outcome(
    learner: &Learner,
    scale: OutcomeScale,
    x: &Matrix,
    y: &[f64],
    positive: &[bool],
    seed: u64,
) -> Result<FittedModel> {
    match scale {
        OutcomeScale::Raw => learner.fit(x, y, Task::Regression, seed),
        OutcomeScale::PositiveIndicator => learner.fit(x, y, Task::Classification, seed),
        OutcomeScale::LogPositive => {
            Ok(fit_two_part(x, y, Some(positive), learner, learner, seed)?.0)
        }
    }
}

/// Nuisances for one estimand.
pub fn fit_all(
    frame: &AnalysisFrame,
    estimand: EstimandId,
    cfg: &NuisanceConfig,
) -> Result<NuisanceSet> {
    NuisanceFitter::new(frame, cfg)?.fit(estimand, &Routing::correct())
}

/// Nuisances for several estimands with shared propensity fits.
pub fn fit_many(
    frame: &AnalysisFrame,
    estimands: &[EstimandId],
    cfg: &NuisanceConfig,
) -> Result<Vec<NuisanceSet>> {
    let mut fitter = NuisanceFitter::new(frame, cfg)?;
    estimands
        .iter()
        .map(|&e| fitter.fit(e, &Routing::correct()))
        .collect()
}

fn regress_in_arm(
    frame: &AnalysisFrame,
    b: usize,
    target: &[f64],
    arm: u8,
    learner: &Learner,
    outcome: bool,
    seed: u64,
) -> Result<Vec<f64>> {
    if target.len() != frame.n() {
        return Err(Error::Dimension("pseudo-outcome length differs from frame".into()));
    }
    let rows = frame.rows_in_arm(arm);
    if rows.is_empty() {
        return Err(Error::EmptyStratum {
            arm,
            what: format!("regression on (X, M̄_{b})"),
        });
    }
    let x = frame.features(b);
    let xfit = x.select_rows(&rows);
    let yfit: Vec<f64> = rows.iter().map(|&i| target[i]).collect();
    let model = if outcome {
        let positive: Vec<bool> = rows.iter().map(|&i| frame.positive()[i]).collect();
        fit_outcome(learner, frame.scale(), &xfit, &yfit, &positive, seed)?
    } else {
        learner.fit(&xfit, &yfit, Task::Regression, seed)?
    };
    model.predict(&x)
}

/// `P̂(R = 1 | X)` clipped to `[δ, 1 − δ]`.
pub fn fit_propensity(
    frame: &AnalysisFrame,
    learner: &Learner,
    delta: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    fit_g(frame, 0, learner, delta, seed)
}

/// `P̂(R = 1 | M̄_k, X)` clipped to `[δ, 1 − δ]`; `k = 0` gives `π̂`.
pub fn fit_g(
    frame: &AnalysisFrame,
    k: usize,
    learner: &Learner,
    delta: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if k > frame.k() {
        return Err(Error::Config(format!("g_{k} with only {} mediators", frame.k())));
    }
    let x = frame.features(k);
    let r: Vec<f64> = frame.r().iter().map(|&v| f64::from(v)).collect();
    let mut p = learner
        .fit(&x, &r, Task::Classification, seed)?
        .predict(&x)?;
    clip(&mut p, delta);
    Ok(p)
}

/// `μ̂_k(M̄_k, r₀, X)`: the outcome regressed on `(X, M̄_k)` among `R = r₀`,
/// predicted for every row.
pub fn fit_mu(
    frame: &AnalysisFrame,
    k: usize,
    learner: &Learner,
    r0: u8,
    seed: u64,
) -> Result<Vec<f64>> {
    regress_in_arm(frame, k, frame.y(), r0, learner, true, seed)
}

/// `𝓑̂_k`: `mu_hat` regressed on `(X, M̄_{k−1})` among `R = r_k`.
pub fn fit_b(
    frame: &AnalysisFrame,
    k: usize,
    mu_hat: &[f64],
    learner: &Learner,
    r_k: u8,
    seed: u64,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("sequential regression needs k ≥ 1".into()));
    }
    regress_in_arm(frame, k - 1, mu_hat, r_k, learner, false, seed)
}

/// `𝓒̂`: a pseudo-outcome regressed on `X` among `R = r₁`.
pub fn fit_c(
    frame: &AnalysisFrame,
    pseudo: &[f64],
    learner: &Learner,
    r1: u8,
    seed: u64,
) -> Result<Vec<f64>> {
    regress_in_arm(frame, 0, pseudo, r1, learner, false, seed)
}
