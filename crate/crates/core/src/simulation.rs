//! Structural-equation simulation designs, cascade truths and replication
//! grids.

use std::fmt;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{AnalysisFrame, OutcomeScale};
use crate::decomposition::contrast_eif;
use crate::error::{Error, Result};
use crate::estimand::{ArmVector, EstimandId};
use crate::estimators::{self, GammaEstimate};
use crate::learners::{Learner, LearnerKind};
use crate::linalg::{dot, Matrix};
use crate::nuisance::{mix_seed, NuisanceConfig, NuisanceFitter, Role, Routing};
use crate::oracle::{DgpTables, DiscreteDgp};
use crate::scalar::expit;

const MC_CHUNK: usize = 1 << 16;
const RHO: f64 = 0.5;

/// Coefficients of the zero-inflated, four-block design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sim1Coefficients {
    pub v_r: Vec<f64>,
    pub v_m11: Vec<f64>,
    pub v_m12: Vec<f64>,
    pub v_m2: Vec<f64>,
    pub v_m31: Vec<f64>,
    pub v_m32: Vec<f64>,
    pub v_m41: Vec<f64>,
    pub v_m42: Vec<f64>,
    pub v_y: Vec<f64>,
}

impl Default for Sim1Coefficients {
    fn default() -> Self {
        Sim1Coefficients {
            v_r: vec![-0.34, 0.38, -0.24, 0.31, -0.44],
            v_m11: vec![-0.09, 0.56, 0.26, 0.23, -0.28],
            v_m12: vec![-0.43, 0.44, 0.17, 0.33, -0.33],
            v_m2: vec![-0.15, 0.80, 0.36, 0.16, 0.48, -0.23, 0.39],
            v_m31: vec![-0.23, 0.61, 0.23, 0.35, 0.48, -0.24, 0.24, 0.34],
            v_m32: vec![-0.46, 0.57, 0.33, 0.21, 0.23, 0.13, -0.16, -0.12],
            v_m41: vec![-0.50, 0.31, 0.48, 0.17, 0.40, 0.18, 0.37, 0.39, -0.38],
            v_m42: vec![-0.47, 0.45, 0.31, 0.43, 0.14, 0.39, 0.44, -0.36, -0.49],
            v_y: vec![
                0.61, 0.57, 0.53, 0.45, 0.81, 0.87, 0.92, 0.23, 0.37, 0.69, 0.95, -0.47, 0.14, -0.64,
            ],
        }
    }
}

impl Sim1Coefficients {
    fn validate(&self) -> Result<()> {
        let expect = [
            ("v_r", &self.v_r, 5),
            ("v_m11", &self.v_m11, 5),
            ("v_m12", &self.v_m12, 5),
            ("v_m2", &self.v_m2, 7),
            ("v_m31", &self.v_m31, 8),
            ("v_m32", &self.v_m32, 8),
            ("v_m41", &self.v_m41, 9),
            ("v_m42", &self.v_m42, 9),
            ("v_y", &self.v_y, 14),
        ];
        check_lengths(&expect)
    }
}

/// Coefficients of the linear-Gaussian design with uniform covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sim2Coefficients {
    pub v_r: Vec<f64>,
    pub v_m1: Vec<f64>,
    pub v_m2: Vec<f64>,
    pub v_m3: Vec<f64>,
    pub v_m4: Vec<f64>,
    pub v_y: Vec<f64>,
}

impl Default for Sim2Coefficients {
    fn default() -> Self {
        Sim2Coefficients {
            v_r: vec![-0.10, 1.00, 0.20, -0.40, 0.80],
            v_m1: vec![-0.13, 0.23, -0.18, 0.15, -0.16, 0.13],
            v_m2: vec![-0.11, -0.06, 0.20, 0.25, 0.02, -0.12, 0.16],
            v_m3: vec![-0.24, -0.08, -0.15, 0.03, 0.14, 0.06, -0.14, 0.09],
            v_m4: vec![-0.13, -0.09, -0.04, 0.10, -0.25, -0.05, -0.08, 0.19, -0.20],
            v_y: vec![0.43, 0.29, 0.28, -0.26, -0.38, 0.18, 0.39, -0.22, -0.13, 0.28],
        }
    }
}

impl Sim2Coefficients {
    fn validate(&self) -> Result<()> {
        let expect = [
            ("v_r", &self.v_r, 5),
            ("v_m1", &self.v_m1, 6),
            ("v_m2", &self.v_m2, 7),
            ("v_m3", &self.v_m3, 8),
            ("v_m4", &self.v_m4, 9),
            ("v_y", &self.v_y, 10),
        ];
        check_lengths(&expect)
    }

    fn mediator(&self, k: usize) -> &[f64] {
        match k {
            1 => &self.v_m1,
            2 => &self.v_m2,
            3 => &self.v_m3,
            _ => &self.v_m4,
        }
    }
}

fn check_lengths(expect: &[(&str, &Vec<f64>, usize)]) -> Result<()> {
    for (name, v, len) in expect {
        if v.len() != *len {
            return Err(Error::Config(format!(
                "{name} needs {len} coefficients, got {}",
                v.len()
            )));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config(format!("{name} has a non-finite coefficient")));
        }
    }
    Ok(())
}

/// Which structural equations generate the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpKind {
    /// Three covariates, two-column blocks `M₁, M₃, M₄`, binary `M₂` and a
    /// zero-inflated log-normal outcome.
    Sim1MepsLike {
        #[serde(default)]
        coefficients: Sim1Coefficients,
    },
    /// Four uniform covariates, Gaussian mediators and outcome.
    Sim2Misspec {
        #[serde(default)]
        coefficients: Sim2Coefficients,
        /// Report `exp(Y)` so that the log-positive transform recovers the
        /// Gaussian outcome.
        #[serde(default)]
        exp_outcome: bool,
    },
    DiscreteToy { tables: DgpTables },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    #[serde(flatten)]
    pub kind: DgpKind,
    #[serde(default)]
    pub seed: u64,
}

impl DgpSpec {
    pub fn sim1() -> Self {
        DgpSpec {
            kind: DgpKind::Sim1MepsLike {
                coefficients: Sim1Coefficients::default(),
            },
            seed: 0,
        }
    }

    pub fn sim2() -> Self {
        DgpSpec {
            kind: DgpKind::Sim2Misspec {
                coefficients: Sim2Coefficients::default(),
                exp_outcome: false,
            },
            seed: 0,
        }
    }

    /// Sim-2 with a strictly positive outcome `exp(Y)`.
    pub fn sim2_log() -> Self {
        DgpSpec {
            kind: DgpKind::Sim2Misspec {
                coefficients: Sim2Coefficients::default(),
                exp_outcome: true,
            },
            seed: 0,
        }
    }

    pub fn discrete(dgp: &DiscreteDgp) -> Self {
        DgpSpec {
            kind: DgpKind::DiscreteToy {
                tables: dgp.tables().clone(),
            },
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn name(&self) -> String {
        match &self.kind {
            DgpKind::Sim1MepsLike { .. } => "sim1_meps_like".into(),
            DgpKind::Sim2Misspec { exp_outcome: false, .. } => "sim2_misspec".into(),
            DgpKind::Sim2Misspec { exp_outcome: true, .. } => "sim2_misspec_exp".into(),
            DgpKind::DiscreteToy { tables } if !tables.name.is_empty() => {
                format!("discrete_toy:{}", tables.name)
            }
            DgpKind::DiscreteToy { .. } => "discrete_toy".into(),
        }
    }

    /// Number of mediator blocks.
    pub fn k(&self) -> usize {
        match &self.kind {
            DgpKind::Sim1MepsLike { .. } | DgpKind::Sim2Misspec { .. } => 4,
            DgpKind::DiscreteToy { tables } => tables.mediators.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            DgpKind::Sim1MepsLike { coefficients } => coefficients.validate(),
            DgpKind::Sim2Misspec { coefficients, .. } => coefficients.validate(),
            DgpKind::DiscreteToy { tables } => DiscreteDgp::new(tables.clone()).map(|_| ()),
        }
    }

    fn compile(&self) -> Result<Compiled<'_>> {
        self.validate()?;
        Ok(match &self.kind {
            DgpKind::Sim1MepsLike { coefficients } => Compiled::Sim1(coefficients),
            DgpKind::Sim2Misspec {
                coefficients,
                exp_outcome,
            } => Compiled::Sim2(coefficients, *exp_outcome),
            DgpKind::DiscreteToy { tables } => Compiled::Discrete(DiscreteDgp::new(tables.clone())?),
        })
    }
}

enum Compiled<'a> {
    Sim1(&'a Sim1Coefficients),
    Sim2(&'a Sim2Coefficients, bool),
    Discrete(DiscreteDgp),
}

/// Exogenous noise of one unit; shared across arm vectors so that
/// counterfactual contrasts use common draws.
struct Noise {
    z: [f64; 6],
    u: [f64; 6],
}

impl Noise {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut z = [0.0; 6];
        let mut u = [0.0; 6];
        for v in &mut z {
            *v = rng.sample(StandardNormal);
        }
        for v in &mut u {
            *v = rng.random();
        }
        Noise { z, u }
    }
}

fn bern(u: f64, p: f64) -> f64 {
    if u < p {
        1.0
    } else {
        0.0
    }
}

/// Second coordinate of a unit-variance pair with correlation `RHO`.
fn paired(z1: f64, z2: f64) -> f64 {
    RHO * z1 + (1.0 - RHO * RHO).sqrt() * z2
}

/// One unit's mediators under `arms` and the linear predictor of the outcome.
struct Unit {
    blocks: Vec<Vec<f64>>,
    eta: f64,
}

fn sim1_x(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let x1 = 2.0 * rng.random::<f64>();
    let x2 = 2.0 * rng.random::<f64>();
    let x3 = bern(rng.random(), 0.5);
    [x1, x2, x3]
}

fn sim1_propensity(c: &Sim1Coefficients, x: &[f64; 3]) -> f64 {
    let [x1, x2, x3] = *x;
    expit(dot(
        &c.v_r,
        &[1.0, x1.sqrt(), x1.sqrt() * x2.powf(1.5) * x3, x2 * x2, x2 / (1.0 + x1 + x3)],
    ))
}

fn sim1_unit(c: &Sim1Coefficients, x: &[f64; 3], r0: f64, a: [f64; 4], e: &Noise) -> Unit {
    let [x1, x2, x3] = *x;
    let r = a[0];
    let m11 = dot(&c.v_m11, &[1.0, r, x1 * x2, x2.sqrt() * x3, r * x3]) + e.z[0];
    let s12 = dot(&c.v_m12, &[1.0, r, x1 * x1, x2, x3]) + paired(e.z[0], e.z[1]);
    let m12 = bern(e.u[0], expit(s12));
    let r = a[1];
    let m2 = bern(
        e.u[1],
        expit(dot(
            &c.v_m2,
            &[1.0, r, r * x3, r * m11, m12 * x2, x1, m11 / (1.0 + x2)],
        )),
    );
    let r = a[2];
    let s31 = dot(&c.v_m31, &[1.0, r, r * m11, m12, r * m2, x1, x2, r * x3]) + e.z[2];
    let s32 = dot(&c.v_m32, &[1.0, r, m11, m12, r * m2, x1.sqrt(), x2, x3]) + paired(e.z[2], e.z[3]);
    let m31 = bern(e.u[2], expit(s31));
    let m32 = bern(e.u[3], expit(s32));
    let r = a[3];
    let m41 = dot(
        &c.v_m41,
        &[1.0, r, m11, m12, m2, m31 * m32, r * x1, x2, x2 * x3],
    ) + e.z[4];
    let s42 = dot(&c.v_m42, &[1.0, r, m11, m12, m2, m31 * m32, x1, x2, x3]) + paired(e.z[4], e.z[5]);
    let m42 = bern(e.u[4], expit(s42));
    let eta = dot(
        &c.v_y,
        &[
            1.0,
            r0,
            m11 * x1.sqrt(),
            m12 * x2 * x2,
            m2 * x1.powi(3) * x2.sqrt(),
            m31 * x1.powf(0.1).exp(),
            r0 * m32,
            m41,
            m42,
            m41 * x1,
            r0 * m2 * x2,
            (x1 * x2).cos(),
            x3,
            (x1 + x2).sqrt(),
        ],
    );
    Unit {
        blocks: vec![vec![m11, m12], vec![m2], vec![m31, m32], vec![m41, m42]],
        eta,
    }
}

/// `E[s(Y) | Y*]` for the zero-inflated outcome on scale `s`.
fn sim1_outcome_mean(eta: f64, scale: OutcomeScale) -> f64 {
    let p = expit(eta);
    match scale {
        OutcomeScale::Raw => p * (0.4 * eta).exp(),
        OutcomeScale::LogPositive => p * 0.4 * eta,
        OutcomeScale::PositiveIndicator => p,
    }
}

fn sim2_x(rng: &mut ChaCha8Rng) -> [f64; 4] {
    [rng.random(), rng.random(), rng.random(), rng.random()]
}

fn sim2_design(x: &[f64; 4], r: f64, m: &[f64]) -> Vec<f64> {
    let mut d = Vec::with_capacity(6 + m.len());
    d.push(1.0);
    d.extend_from_slice(x);
    d.push(r);
    d.extend_from_slice(m);
    d
}

fn sim2_propensity(c: &Sim2Coefficients, x: &[f64; 4]) -> f64 {
    expit(c.v_r[0] + dot(&c.v_r[1..], x))
}

fn sim2_unit(c: &Sim2Coefficients, x: &[f64; 4], r0: f64, a: [f64; 4], e: &Noise) -> Unit {
    let mut m = Vec::with_capacity(4);
    for k in 1..=4 {
        let v = dot(c.mediator(k), &sim2_design(x, a[k - 1], &m)) + e.z[k - 1];
        m.push(v);
    }
    let eta = dot(&c.v_y, &sim2_design(x, r0, &m));
    Unit {
        blocks: m.iter().map(|&v| vec![v]).collect(),
        eta,
    }
}

fn sim2_outcome_mean(eta: f64, exp_outcome: bool, scale: OutcomeScale) -> Result<f64> {
    match (exp_outcome, scale) {
        (false, OutcomeScale::Raw) | (true, OutcomeScale::LogPositive) => Ok(eta),
        (true, OutcomeScale::Raw) => Ok((eta + 0.5).exp()),
        (true, OutcomeScale::PositiveIndicator) => Ok(1.0),
        (false, s) => Err(Error::Scale(format!(
            "sim2 outcome is Gaussian; {s:?} needs the exp_outcome variant"
        ))),
    }
}

fn arm_array(arms: &ArmVector) -> Result<[f64; 4]> {
    if arms.k() != 4 {
        return Err(Error::Config(format!(
            "design has 4 mediator blocks, arm vector has {}",
            arms.k()
        )));
    }
    Ok([0, 1, 2, 3].map(|j| f64::from(arms.mediators[j])))
}

/// Draws `n` observations; deterministic in `spec.seed`. Outcomes are on the
/// raw scale.
pub fn generate(spec: &DgpSpec, n: usize) -> Result<AnalysisFrame> {
    if n == 0 {
        return Err(Error::Config("sample size must be ≥ 1".into()));
    }
    let compiled = spec.compile()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (xs, r, units, y): (Vec<Vec<f64>>, Vec<u8>, Vec<Unit>, Vec<f64>) = match compiled {
        Compiled::Discrete(d) => return d.sample(n, spec.seed),
        Compiled::Sim1(c) => {
            let mut cols = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for _ in 0..n {
                let x = sim1_x(&mut rng);
                let ri = bern(rng.random(), sim1_propensity(c, &x));
                let e = Noise::draw(&mut rng);
                let unit = sim1_unit(c, &x, ri, [ri; 4], &e);
                let positive = rng.random::<f64>() < expit(unit.eta);
                cols.0.push(x.to_vec());
                cols.1.push(ri as u8);
                cols.3.push(if positive { (0.4 * unit.eta).exp() } else { 0.0 });
                cols.2.push(unit);
            }
            cols
        }
        Compiled::Sim2(c, exp_outcome) => {
            let mut cols = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for _ in 0..n {
                let x = sim2_x(&mut rng);
                let ri = bern(rng.random(), sim2_propensity(c, &x));
                let e = Noise::draw(&mut rng);
                let unit = sim2_unit(c, &x, ri, [ri; 4], &e);
                let yi = unit.eta + rng.sample::<f64, _>(StandardNormal);
                cols.0.push(x.to_vec());
                cols.1.push(ri as u8);
                cols.3.push(if exp_outcome { yi.exp() } else { yi });
                cols.2.push(unit);
            }
            cols
        }
    };
    let x = Matrix::from_rows(&xs)?;
    let k = units.first().map_or(0, |u| u.blocks.len());
    let blocks = (0..k)
        .map(|j| Matrix::from_rows(&units.iter().map(|u| u.blocks[j].clone()).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    AnalysisFrame::new(x, r, blocks, y, OutcomeScale::Raw)
}

/// `X^false = (X₁², e^{X₂}, X₃^{0.3}, (X₄ + X₃^{0.3}) / (e^{X₂} + X₁²))`
/// applied to the first four covariates; later columns pass through.
pub fn misspecify_covariates(frame: &AnalysisFrame) -> Result<AnalysisFrame> {
    let p = frame.x().ncols();
    if p < 4 {
        return Err(Error::Config(format!(
            "misspecification transform needs at least 4 covariates, frame has {p}"
        )));
    }
    let x = frame.x().map_rows(p, |row, out| {
        let a = row[0] * row[0];
        let b = row[1].exp();
        let c = row[2].powf(0.3);
        out[0] = a;
        out[1] = b;
        out[2] = c;
        out[3] = (row[3] + c) / (b + a);
        out[4..].copy_from_slice(&row[4..]);
    });
    frame.with_covariates(x)
}

/// A counterfactual mean or a difference of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Target {
    Gamma { estimand: EstimandId },
    Contrast { minuend: EstimandId, subtrahend: EstimandId },
}

impl Target {
    pub fn gamma(estimand: EstimandId) -> Self {
        Target::Gamma { estimand }
    }

    /// `γ_a − γ_dis`.
    pub fn rho(estimand: EstimandId) -> Self {
        Target::Contrast {
            minuend: estimand,
            subtrahend: EstimandId::Dis,
        }
    }

    fn estimands(&self) -> Vec<EstimandId> {
        match *self {
            Target::Gamma { estimand } => vec![estimand],
            Target::Contrast { minuend, subtrahend } => vec![minuend, subtrahend],
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Target::Gamma { estimand } => write!(f, "{estimand}"),
            Target::Contrast {
                minuend,
                subtrahend: EstimandId::Dis,
            } => match minuend {
                EstimandId::Adv => write!(f, "rho_total"),
                EstimandId::Direct => write!(f, "rho_outcome"),
                EstimandId::Mediator(k) => write!(f, "rho_mediator_{k}"),
                other => write!(f, "{other} - gamma_dis"),
            },
            Target::Contrast { minuend, subtrahend } => write!(f, "{minuend} - {subtrahend}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthMethod {
    Enumeration,
    CascadeMonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub target: Target,
    pub value: f64,
    /// Monte-Carlo standard error; zero for enumeration.
    pub se: f64,
    pub draws: usize,
    pub method: TruthMethod,
}

/// Means and covariances of `s(Y(r₀, a))` over joint cascade draws, one
/// entry per arm vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSummary {
    pub draws: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl CascadeSummary {
    pub fn se(&self, i: usize) -> f64 {
        (self.cov[i][i] / self.draws as f64).sqrt()
    }

    /// Standard error of `mean[i] − mean[j]`.
    pub fn contrast_se(&self, i: usize, j: usize) -> f64 {
        let v = self.cov[i][i] + self.cov[j][j] - 2.0 * self.cov[i][j];
        (v.max(0.0) / self.draws as f64).sqrt()
    }
}

/// Simulates the structural cascade `M₁(a₁), M₂(a₂, M₁ᶜ), …, Y(r₀, M̄ᶜ)` for
/// every arm vector with shared exogenous noise. The last stage is
/// integrated analytically.
pub fn cascade(
    spec: &DgpSpec,
    arms: &[ArmVector],
    scale: OutcomeScale,
    draws: usize,
    seed: u64,
) -> Result<CascadeSummary> {
    if draws < 2 {
        return Err(Error::Config("cascade needs at least 2 draws".into()));
    }
    if arms.is_empty() {
        return Err(Error::Config("cascade needs an arm vector".into()));
    }
    let compiled = spec.compile()?;
    match &compiled {
        Compiled::Discrete(_) => {
            return Err(Error::Config(
                "discrete designs are enumerated; use counterfactual_truth".into(),
            ))
        }
        Compiled::Sim2(_, e) => {
            sim2_outcome_mean(0.0, *e, scale)?;
        }
        Compiled::Sim1(_) => {}
    }
    let arrays = arms.iter().map(arm_array).collect::<Result<Vec<_>>>()?;
    let m = arms.len();
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..draws.div_ceil(MC_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, c as u64));
            let len = MC_CHUNK.min(draws - c * MC_CHUNK);
            let mut s = vec![0.0; m];
            let mut ss = vec![0.0; m * m];
            let mut v = vec![0.0; m];
            for _ in 0..len {
                match &compiled {
                    Compiled::Sim1(cf) => {
                        let x = sim1_x(&mut rng);
                        let e = Noise::draw(&mut rng);
                        for (j, (a, arm)) in arms.iter().zip(&arrays).enumerate() {
                            let unit = sim1_unit(cf, &x, f64::from(a.r0), *arm, &e);
                            v[j] = sim1_outcome_mean(unit.eta, scale);
                        }
                    }
                    Compiled::Sim2(cf, exp_outcome) => {
                        let x = sim2_x(&mut rng);
                        let e = Noise::draw(&mut rng);
                        for (j, (a, arm)) in arms.iter().zip(&arrays).enumerate() {
                            let unit = sim2_unit(cf, &x, f64::from(a.r0), *arm, &e);
                            v[j] = sim2_outcome_mean(unit.eta, *exp_outcome, scale)
                                .expect("scale checked above");
                        }
                    }
                    Compiled::Discrete(_) => unreachable!(),
                }
                for i in 0..m {
                    s[i] += v[i];
                    for j in 0..m {
                        ss[i * m + j] += v[i] * v[j];
                    }
                }
            }
            (s, ss)
        })
        .collect();
    let mut s = vec![0.0; m];
    let mut ss = vec![0.0; m * m];
    for (cs, css) in &chunks {
        for i in 0..m {
            s[i] += cs[i];
        }
        for (a, b) in ss.iter_mut().zip(css) {
            *a += b;
        }
    }
    let nf = draws as f64;
    let mean: Vec<f64> = s.iter().map(|v| v / nf).collect();
    let cov = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| (ss[i * m + j] - nf * mean[i] * mean[j]) / (nf - 1.0))
                .collect()
        })
        .collect();
    Ok(CascadeSummary { draws, mean, cov })
}

/// Ground truth for `γ(r₀; a)`: enumeration for discrete designs, cascade
/// Monte Carlo otherwise.
pub fn counterfactual_truth(
    spec: &DgpSpec,
    arms: &ArmVector,
    scale: OutcomeScale,
    draws: usize,
    seed: u64,
) -> Result<Truth> {
    let target = Target::Gamma {
        estimand: EstimandId::Dis,
    };
    if let DgpKind::DiscreteToy { tables } = &spec.kind {
        let d = DiscreteDgp::new(tables.clone())?;
        return Ok(Truth {
            target,
            value: enumerate_discrete(&d, arms, scale)?,
            se: 0.0,
            draws: 0,
            method: TruthMethod::Enumeration,
        });
    }
    let s = cascade(spec, std::slice::from_ref(arms), scale, draws, seed)?;
    Ok(Truth {
        target,
        value: s.mean[0],
        se: s.se(0),
        draws,
        method: TruthMethod::CascadeMonteCarlo,
    })
}

fn enumerate_discrete(d: &DiscreteDgp, arms: &ArmVector, scale: OutcomeScale) -> Result<f64> {
    if arms.k() != d.k() {
        return Err(Error::Config(format!(
            "fixture has {} mediator blocks, arm vector has {}",
            d.k(),
            arms.k()
        )));
    }
    if scale == OutcomeScale::Raw {
        return Ok(d.enumerate_arms(arms));
    }
    let mut t = d.tables().clone();
    if scale == OutcomeScale::LogPositive && t.outcome.values.iter().any(|&v| v < 0.0) {
        return Err(Error::Scale("negative outcome support under log_positive".into()));
    }
    for v in &mut t.outcome.values {
        *v = scale.apply(*v);
    }
    let mut seen = t.outcome.values.clone();
    seen.sort_by(f64::total_cmp);
    seen.dedup();
    if seen.len() != t.outcome.values.len() {
        return Err(Error::Scale(
            "transformed outcome support has ties; enumerate on the raw scale".into(),
        ));
    }
    Ok(DiscreteDgp::new(t)?.enumerate_arms(arms))
}

/// Truths for every target with common random numbers across estimands.
pub fn compute_truths(
    spec: &DgpSpec,
    targets: &[Target],
    scale: OutcomeScale,
    draws: usize,
    seed: u64,
) -> Result<Vec<Truth>> {
    let k = spec.k();
    let mut ids: Vec<EstimandId> = targets.iter().flat_map(Target::estimands).collect();
    ids.sort();
    ids.dedup();
    let arms = ids.iter().map(|id| id.arms(k)).collect::<Result<Vec<_>>>()?;
    let pos = |id: EstimandId| ids.iter().position(|&v| v == id).expect("collected above");
    if let DgpKind::DiscreteToy { tables } = &spec.kind {
        let d = DiscreteDgp::new(tables.clone())?;
        let vals = arms
            .iter()
            .map(|a| enumerate_discrete(&d, a, scale))
            .collect::<Result<Vec<_>>>()?;
        return Ok(targets
            .iter()
            .map(|&target| {
                let value = match target {
                    Target::Gamma { estimand } => vals[pos(estimand)],
                    Target::Contrast { minuend, subtrahend } => {
                        vals[pos(minuend)] - vals[pos(subtrahend)]
                    }
                };
                Truth {
                    target,
                    value,
                    se: 0.0,
                    draws: 0,
                    method: TruthMethod::Enumeration,
                }
            })
            .collect());
    }
    let s = cascade(spec, &arms, scale, draws, seed)?;
    Ok(targets
        .iter()
        .map(|&target| {
            let (value, se) = match target {
                Target::Gamma { estimand } => (s.mean[pos(estimand)], s.se(pos(estimand))),
                Target::Contrast { minuend, subtrahend } => {
                    let (i, j) = (pos(minuend), pos(subtrahend));
                    (s.mean[i] - s.mean[j], s.contrast_se(i, j))
                }
            };
            Truth {
                target,
                value,
                se,
                draws,
                method: TruthMethod::CascadeMonteCarlo,
            }
        })
        .collect())
}

/// Exact `γ` for the linear-Gaussian design with a raw outcome: every stage
/// is linear, so means propagate with `E[X_j] = 1/2`.
pub fn sim2_closed_form(coefficients: &Sim2Coefficients, arms: &ArmVector) -> Result<f64> {
    coefficients.validate()?;
    let a = arm_array(arms)?;
    let ex = [0.5; 4];
    let mut m = Vec::with_capacity(4);
    for k in 1..=4 {
        m.push(dot(coefficients.mediator(k), &sim2_design(&ex, a[k - 1], &m)));
    }
    Ok(dot(&coefficients.v_y, &sim2_design(&ex, f64::from(arms.r0), &m)))
}

/// How the nuisance regressions of a method are specified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "condition", rename_all = "snake_case")]
pub enum Misspecification {
    /// Every regression on the true covariates.
    None,
    /// Every regression on the transformed covariates.
    All,
    /// A robustness condition: only the nuisances outside the named
    /// consistent subset use transformed covariates.
    Condition(usize),
}

/// Number of robustness conditions available for an estimand.
pub fn condition_count(estimand: EstimandId) -> usize {
    match estimand {
        EstimandId::Direct | EstimandId::Mediator(1) => 3,
        EstimandId::Mediator(_) => 4,
        _ => 0,
    }
}

/// Roles computed on transformed covariates for robustness condition `c`.
///
/// Conditions name the consistent subsets: for the outcome-shifted mean
/// `{π, g_K}`, `{π, μ_K}`, `{𝒞, μ_K}`; for mediator `k`
/// `{π, g_{k−1}, g_k}`, `{π, g_{k−1}, μ_k}`, `{π, 𝓑_k, μ_k}`,
/// `{𝒞, 𝓑_k, μ_k}`, with the last one absent for `k = 1`.
pub fn condition_routing(estimand: EstimandId, k_total: usize, c: usize) -> Option<Routing> {
    use Role::*;
    let roles: Vec<Role> = match (estimand, c) {
        (EstimandId::Direct, 1) => vec![Level(k_total), Level(0)],
        (EstimandId::Direct, 2) => vec![G(k_total), Level(0)],
        (EstimandId::Direct, 3) => vec![Propensity, G(k_total)],
        (EstimandId::Mediator(1), 1) => vec![Level(1), Level(0)],
        (EstimandId::Mediator(1), 2) => vec![G(1), Level(0)],
        (EstimandId::Mediator(1), 3) => vec![Propensity, G(1)],
        (EstimandId::Mediator(k), 1) if k >= 2 => vec![Level(k), Level(k - 1), Level(0)],
        (EstimandId::Mediator(k), 2) if k >= 2 => vec![G(k), Level(k - 1), Level(0)],
        (EstimandId::Mediator(k), 3) if k >= 2 => vec![G(k - 1), G(k), Level(0)],
        (EstimandId::Mediator(k), 4) if k >= 2 => vec![Propensity, G(k - 1), G(k)],
        _ => return None,
    };
    Some(Routing::of(roles))
}

fn all_roles(k_total: usize) -> Routing {
    let mut roles = vec![Role::Propensity];
    roles.extend((1..=k_total).map(Role::G));
    roles.extend((0..=k_total).map(Role::Level));
    Routing::of(roles)
}

/// A nuisance configuration evaluated in the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub name: String,
    pub nuisance: NuisanceConfig,
    pub misspecification: Misspecification,
}

impl Method {
    pub fn new(name: impl Into<String>, nuisance: NuisanceConfig, misspecification: Misspecification) -> Self {
        Method {
            name: name.into(),
            nuisance,
            misspecification,
        }
    }

    /// Main-effects GLMs: logistic for probabilities, least squares otherwise.
    pub fn glm(name: impl Into<String>, misspecification: Misspecification) -> Self {
        Method::new(
            name,
            NuisanceConfig::with_learner(Learner::base(LearnerKind::Linear)),
            misspecification,
        )
    }

    fn routing(&self, estimand: EstimandId, k_total: usize) -> Option<Routing> {
        match self.misspecification {
            Misspecification::None => Some(Routing::correct()),
            Misspecification::All => Some(all_roles(k_total)),
            Misspecification::Condition(c) => condition_routing(estimand, k_total, c),
        }
    }

    fn needs_alternate(&self) -> bool {
        self.misspecification != Misspecification::None
    }
}

/// GLM methods for every robustness condition plus the all-correct and
/// all-misspecified baselines.
pub fn table1_methods() -> Vec<Method> {
    let mut out = vec![Method::glm("correct", Misspecification::None)];
    out.extend((1..=4).map(|c| Method::glm(format!("condition_{c}"), Misspecification::Condition(c))));
    out.push(Method::glm("all_misspecified", Misspecification::All));
    out
}

fn default_alpha() -> f64 {
    0.05
}

fn default_truth_draws() -> usize {
    10_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub targets: Vec<Target>,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub scale: OutcomeScale,
    #[serde(default = "default_truth_draws")]
    pub truth_draws: usize,
    #[serde(default)]
    pub truth_seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("grid needs targets and methods".into()));
        }
        if self.reps == 0 || self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(Error::Config("grid needs reps ≥ 1 and positive sample sizes".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("method names must be unique".into()));
        }
        for m in &self.methods {
            m.nuisance.validate()?;
        }
        Ok(())
    }
}

/// Aggregated replication metrics for one (target, n, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCell {
    pub target: Target,
    pub label: String,
    pub n: usize,
    pub method: String,
    pub truth: f64,
    pub reps: usize,
    pub failures: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub sd: f64,
    pub mse: f64,
    pub coverage: f64,
    pub ci_width: f64,
    pub mean_se: f64,
    pub sqrt_n_bias: f64,
    pub n_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub n: usize,
    pub rep: usize,
    pub method: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub dgp: String,
    pub scale: OutcomeScale,
    pub base_seed: u64,
    pub reps: usize,
    pub alpha: f64,
    pub truths: Vec<Truth>,
    pub cells: Vec<SimCell>,
    pub failures: Vec<ReplicateFailure>,
}

/// One replicate's estimate of one target.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Draw {
    point: f64,
    se: f64,
}

/// Bias, SD, MSE and interval metrics of replicate estimates.
fn aggregate(draws: &[Draw], truth: f64, z: f64) -> (f64, f64, f64, f64, f64, f64, f64) {
    let reps = draws.len();
    if reps == 0 {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    }
    let r = reps as f64;
    let mean = draws.iter().map(|d| d.point).sum::<f64>() / r;
    let bias = mean - truth;
    let sd = if reps > 1 {
        (draws.iter().map(|d| (d.point - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
    } else {
        0.0
    };
    let mse = draws.iter().map(|d| (d.point - truth).powi(2)).sum::<f64>() / r;
    let coverage = draws
        .iter()
        .filter(|d| (d.point - truth).abs() <= z * d.se)
        .count() as f64
        / r;
    let width = draws.iter().map(|d| 2.0 * z * d.se).sum::<f64>() / r;
    let mean_se = draws.iter().map(|d| d.se).sum::<f64>() / r;
    (mean, bias, sd, mse, coverage, width, mean_se)
}

type RepOutcome = std::result::Result<Vec<Option<Draw>>, String>;

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

fn run_method(
    frame: &AnalysisFrame,
    alternate: Option<&AnalysisFrame>,
    method: &Method,
    targets: &[Target],
    rep_seed: u64,
) -> Result<Vec<Option<Draw>>> {
    let k = frame.k();
    let mut cfg = method.nuisance.clone();
    cfg.seed = mix_seed(cfg.seed, rep_seed);
    let mut fitter = NuisanceFitter::new(frame, &cfg)?;
    if let Some(alt) = alternate.filter(|_| method.needs_alternate()) {
        fitter = fitter.with_alternate(alt)?;
    }
    let mut cache: Vec<(EstimandId, GammaEstimate)> = Vec::new();
    let mut gamma = |id: EstimandId, fitter: &mut NuisanceFitter| -> Result<Option<GammaEstimate>> {
        if let Some((_, g)) = cache.iter().find(|(e, _)| *e == id) {
            return Ok(Some(g.clone()));
        }
        let Some(routing) = method.routing(id, k) else {
            return Ok(None);
        };
        let q = fitter.fit(id, &routing)?;
        let g = estimators::estimate(frame.r(), frame.y(), &q)?;
        cache.push((id, g.clone()));
        Ok(Some(g))
    };
    let mut out = Vec::with_capacity(targets.len());
    for target in targets {
        let draw = match *target {
            Target::Gamma { estimand } => gamma(estimand, &mut fitter)?.map(|g| Draw {
                point: g.point,
                se: g.se,
            }),
            Target::Contrast { minuend, subtrahend } => {
                let a = gamma(minuend, &mut fitter)?;
                let b = gamma(subtrahend, &mut fitter)?;
                match (a, b) {
                    (Some(a), Some(b)) => {
                        let eif = contrast_eif(&a, &b)?;
                        let n = eif.len() as f64;
                        Some(Draw {
                            point: a.point - b.point,
                            se: (eif.iter().map(|e| e * e).sum::<f64>() / n / n).sqrt(),
                        })
                    }
                    _ => None,
                }
            }
        };
        out.push(draw);
    }
    Ok(out)
}

fn run_replicate(
    spec: &DgpSpec,
    cfg: &GridConfig,
    n: usize,
    rep: usize,
) -> (u64, Vec<RepOutcome>) {
    let seed = spec.seed.wrapping_add(rep as u64);
    let data = catch_unwind(AssertUnwindSafe(|| -> Result<(AnalysisFrame, Option<AnalysisFrame>)> {
        let raw = generate(&spec.clone().with_seed(seed), n)?;
        let frame = if cfg.scale == OutcomeScale::Raw {
            raw
        } else {
            raw.rescaled(cfg.scale)?
        };
        let alt = if cfg.methods.iter().any(Method::needs_alternate) {
            Some(misspecify_covariates(&frame)?)
        } else {
            None
        };
        Ok((frame, alt))
    }));
    let (frame, alt) = match data {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => return (seed, vec![Err(e.to_string()); cfg.methods.len()]),
        Err(p) => return (seed, vec![Err(panic_message(p)); cfg.methods.len()]),
    };
    let outcomes = cfg
        .methods
        .iter()
        .map(|m| {
            match catch_unwind(AssertUnwindSafe(|| {
                run_method(&frame, alt.as_ref(), m, &cfg.targets, seed)
            })) {
                Ok(Ok(v)) => Ok(v),
                Ok(Err(e)) => Err(e.to_string()),
                Err(p) => Err(panic_message(p)),
            }
        })
        .collect();
    (seed, outcomes)
}

/// Runs the grid against truths computed by [`compute_truths`].
pub fn run_grid(spec: &DgpSpec, cfg: &GridConfig) -> Result<SimReport> {
    cfg.validate()?;
    let truths = compute_truths(spec, &cfg.targets, cfg.scale, cfg.truth_draws, cfg.truth_seed)?;
    run_grid_with_truths(spec, cfg, &truths)
}

/// Runs the grid against supplied truths, one per target.
pub fn run_grid_with_truths(spec: &DgpSpec, cfg: &GridConfig, truths: &[Truth]) -> Result<SimReport> {
    cfg.validate()?;
    spec.validate()?;
    let truth_of = |t: &Target| {
        truths
            .iter()
            .find(|v| v.target == *t)
            .map(|v| v.value)
            .ok_or_else(|| Error::Config(format!("no truth supplied for {t}")))
    };
    let truth_values = cfg.targets.iter().map(truth_of).collect::<Result<Vec<_>>>()?;
    let z = Normal::standard().inverse_cdf(1.0 - cfg.alpha / 2.0);
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for &n in &cfg.n_list {
        let results: Vec<(u64, Vec<RepOutcome>)> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| run_replicate(spec, cfg, n, rep))
            .collect();
        for (mi, method) in cfg.methods.iter().enumerate() {
            let mut per_target: Vec<Vec<Draw>> = vec![Vec::new(); cfg.targets.len()];
            let mut applicable = vec![false; cfg.targets.len()];
            let mut failed = 0;
            for (rep, (seed, outcomes)) in results.iter().enumerate() {
                match &outcomes[mi] {
                    Ok(draws) => {
                        for (ti, d) in draws.iter().enumerate() {
                            if let Some(d) = d {
                                per_target[ti].push(*d);
                                applicable[ti] = true;
                            }
                        }
                    }
                    Err(message) => {
                        failed += 1;
                        failures.push(ReplicateFailure {
                            n,
                            rep,
                            method: method.name.clone(),
                            seed: *seed,
                            message: message.clone(),
                        });
                    }
                }
            }
            for (ti, target) in cfg.targets.iter().enumerate() {
                let routed = method.routing_applies(target, spec.k());
                if !applicable[ti] && !routed {
                    continue;
                }
                let truth = truth_values[ti];
                let (mean, bias, sd, mse, coverage, ci_width, mean_se) =
                    aggregate(&per_target[ti], truth, z);
                let nf = n as f64;
                cells.push(SimCell {
                    target: *target,
                    label: target.to_string(),
                    n,
                    method: method.name.clone(),
                    truth,
                    reps: per_target[ti].len(),
                    failures: failed,
                    mean_estimate: mean,
                    bias,
                    sd,
                    mse,
                    coverage,
                    ci_width,
                    mean_se,
                    sqrt_n_bias: nf.sqrt() * bias,
                    n_var: nf * sd * sd,
                });
            }
        }
    }
    Ok(SimReport {
        dgp: spec.name(),
        scale: cfg.scale,
        base_seed: spec.seed,
        reps: cfg.reps,
        alpha: cfg.alpha,
        truths: truths.to_vec(),
        cells,
        failures,
    })
}

impl Method {
    fn routing_applies(&self, target: &Target, k_total: usize) -> bool {
        target.estimands().iter().all(|&id| self.routing(id, k_total).is_some())
    }
}

impl SimReport {
    pub fn cell(&self, label: &str, n: usize, method: &str) -> Option<&SimCell> {
        self.cells
            .iter()
            .find(|c| c.label == label && c.n == n && c.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Long format: one row per cell and metric.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Csv {
            line: 0,
            message: e.to_string(),
        };
        out.write_record(["target", "n", "method", "metric", "value"])
            .map_err(csv_err)?;
        for c in &self.cells {
            let metrics = [
                ("truth", c.truth),
                ("reps", c.reps as f64),
                ("failures", c.failures as f64),
                ("mean_estimate", c.mean_estimate),
                ("bias", c.bias),
                ("sd", c.sd),
                ("mse", c.mse),
                ("coverage", c.coverage),
                ("ci_width", c.ci_width),
                ("mean_se", c.mean_se),
                ("sqrt_n_bias", c.sqrt_n_bias),
                ("n_var", c.n_var),
            ];
            for (name, v) in metrics {
                out.write_record([
                    c.label.clone(),
                    c.n.to_string(),
                    c.method.clone(),
                    name.to_string(),
                    format!("{v}"),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }

    /// Whitespace-separated `n sqrt_n_bias n_var` blocks, one per target and
    /// method, separated by blank lines.
    pub fn write_curves<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("curve output", e);
        let mut keys: Vec<(String, String)> = Vec::new();
        for c in &self.cells {
            let key = (c.label.clone(), c.method.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        for (i, (label, method)) in keys.iter().enumerate() {
            if i > 0 {
                writeln!(w, "\n").map_err(io)?;
            }
            writeln!(w, "# {label} {method}").map_err(io)?;
            writeln!(w, "# n sqrt_n_bias n_var").map_err(io)?;
            let mut rows: Vec<&SimCell> = self
                .cells
                .iter()
                .filter(|c| &c.label == label && &c.method == method)
                .collect();
            rows.sort_by_key(|c| c.n);
            for c in rows {
                writeln!(w, "{} {} {}", c.n, c.sqrt_n_bias, c.n_var).map_err(io)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misspecification_transform() {
        let x = Matrix::from_rows(&[
            vec![1.0, 1.0, 1.0, 1.0],
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.5, 0.5, 0.5, 0.5],
            vec![0.2, 0.2, 0.2, 0.2],
        ])
        .unwrap();
        let m = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![0.0], vec![1.0]]).unwrap();
        let frame = AnalysisFrame::new(x, vec![0, 1, 0, 1], vec![m], vec![0.0; 4], OutcomeScale::Raw).unwrap();
        let f = misspecify_covariates(&frame).unwrap();
        let e = std::f64::consts::E;
        let want = [1.0, e, 1.0, 2.0 / (e + 1.0)];
        for (a, b) in f.x().row(0).iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(f.x().row(1), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(f.block(1), frame.block(1));
        assert_eq!(f.y(), frame.y());
    }

    #[test]
    fn transform_needs_four_covariates() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        let m = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![0.0], vec![1.0]]).unwrap();
        let frame = AnalysisFrame::new(x, vec![0, 1, 0, 1], vec![m], vec![0.0; 4], OutcomeScale::Raw).unwrap();
        assert!(misspecify_covariates(&frame).is_err());
    }

    #[test]
    fn coefficient_lengths_are_checked() {
        let mut spec = DgpSpec::sim2();
        if let DgpKind::Sim2Misspec { coefficients, .. } = &mut spec.kind {
            assert_eq!(coefficients.v_r, vec![-0.10, 1.00, 0.20, -0.40, 0.80]);
            coefficients.v_r.pop();
        }
        assert!(spec.validate().is_err());
        assert!(generate(&spec, 10).is_err());
        let mut s1 = DgpSpec::sim1();
        if let DgpKind::Sim1MepsLike { coefficients } = &mut s1.kind {
            coefficients.v_y.push(0.0);
        }
        assert!(s1.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic_and_shaped() {
        let a = generate(&DgpSpec::sim1().with_seed(3), 500).unwrap();
        let b = generate(&DgpSpec::sim1().with_seed(3), 500).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.x().ncols(), 3);
        let widths: Vec<usize> = (1..=4).map(|k| a.block(k).ncols()).collect();
        assert_eq!(widths, vec![2, 1, 2, 2]);
        assert!(a.y().iter().any(|&v| v == 0.0) && a.y().iter().any(|&v| v > 0.0));
        let s2 = generate(&DgpSpec::sim2().with_seed(3), 500).unwrap();
        assert_eq!(s2.x().ncols(), 4);
        assert!((1..=4).all(|k| s2.block(k).ncols() == 1));
        let e = generate(&DgpSpec::sim2_log().with_seed(3), 500).unwrap();
        for (u, v) in e.y().iter().zip(s2.y()) {
            assert!((u.ln() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn sim1_positive_part_is_exp_of_linear_predictor() {
        let c = Sim1Coefficients::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = sim1_x(&mut rng);
        let e = Noise::draw(&mut rng);
        let unit = sim1_unit(&c, &x, 1.0, [1.0; 4], &e);
        let p = expit(unit.eta);
        assert!((sim1_outcome_mean(unit.eta, OutcomeScale::PositiveIndicator) - p).abs() < 1e-15);
        assert!((sim1_outcome_mean(unit.eta, OutcomeScale::LogPositive) - p * 0.4 * unit.eta).abs() < 1e-15);
    }

    #[test]
    fn sim2_cascade_matches_closed_form() {
        let spec = DgpSpec::sim2();
        let ids = EstimandId::natural(4);
        let arms: Vec<ArmVector> = ids.iter().map(|id| id.arms(4).unwrap()).collect();
        let s = cascade(&spec, &arms, OutcomeScale::Raw, 400_000, 9).unwrap();
        for (i, a) in arms.iter().enumerate() {
            let exact = sim2_closed_form(&Sim2Coefficients::default(), a).unwrap();
            assert!((s.mean[i] - exact).abs() < 4.0 * s.se(i), "{}", ids[i]);
        }
    }

    #[test]
    fn condition_routes_follow_the_table() {
        assert_eq!(condition_count(EstimandId::Mediator(1)), 3);
        assert_eq!(condition_count(EstimandId::Mediator(3)), 4);
        assert!(condition_routing(EstimandId::Mediator(1), 4, 4).is_none());
        assert!(condition_routing(EstimandId::Dis, 4, 1).is_none());
        let r = condition_routing(EstimandId::Mediator(3), 4, 3).unwrap();
        let mut roles: Vec<Role> = r.alternate.into_iter().collect();
        roles.sort();
        assert_eq!(roles, vec![Role::G(2), Role::G(3), Role::Level(0)]);
        let r = condition_routing(EstimandId::Direct, 4, 2).unwrap();
        assert!(r.alternate.contains(&Role::G(4)) && !r.alternate.contains(&Role::Propensity));
    }

    #[test]
    fn single_replicate_aggregation() {
        let d = [Draw { point: 1.2, se: 0.1 }];
        let (_, bias, sd, mse, cov, ..) = aggregate(&d, 1.0, 1.96);
        assert!((bias - 0.2).abs() < 1e-12);
        assert_eq!(sd, 0.0);
        assert!((mse - 0.04).abs() < 1e-12);
        assert_eq!(cov, 0.0);
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = DgpSpec::sim2_log().with_seed(5);
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<DgpSpec>(&s).unwrap(), spec);
        let parsed: DgpSpec = serde_json::from_str(r#"{"kind":"sim1_meps_like","seed":2}"#).unwrap();
        assert_eq!(parsed, DgpSpec::sim1().with_seed(2));
    }
}
