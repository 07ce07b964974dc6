//! Disparity components built from pairs of counterfactual means, with
//! influence-function standard errors, and the reporting scales.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{AnalysisFrame, OutcomeScale};
use crate::error::{Error, Result};
use crate::estimand::EstimandId;
use crate::estimators::{estimate, GammaEstimate};
use crate::nuisance::{NuisanceConfig, NuisanceFitter, NuisanceSet, Routing};
use crate::scalar::sample_variance;

pub const DEFAULT_ALPHA: f64 = 0.05;

/// What a component measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "snake_case")]
pub enum ComponentLabel {
    Total,
    /// Shifting mediator `k` alone.
    Mediator(usize),
    /// Shifting the outcome law alone.
    OutcomeAttributed,
    /// Total minus the mediator-`k` component.
    ResidualMediator(usize),
    /// Total minus the outcome-attributed component.
    ResidualOutcome,
    /// Cumulative step for mediator `k`.
    Sequential(usize),
    /// Final cumulative step, the outcome law.
    SequentialOutcome,
}

impl fmt::Display for ComponentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComponentLabel::Total => write!(f, "rho_total"),
            ComponentLabel::Mediator(k) => write!(f, "rho_mediator_{k}"),
            ComponentLabel::OutcomeAttributed => write!(f, "rho_outcome"),
            ComponentLabel::ResidualMediator(k) => write!(f, "rho_residual_mediator_{k}"),
            ComponentLabel::ResidualOutcome => write!(f, "rho_residual_outcome"),
            ComponentLabel::Sequential(k) => write!(f, "rho_sequential_{k}"),
            ComponentLabel::SequentialOutcome => write!(f, "rho_sequential_outcome"),
        }
    }
}

/// Scale a component is expressed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentScale {
    Difference,
    GeometricRatio,
    ProbabilityDifference,
}

/// Requested reporting scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportScale {
    #[default]
    Difference,
    /// `exp` of log-scale differences; needs a `log_positive` outcome.
    Geometric,
    /// Reruns everything on `I(Y > 0)`.
    Probability,
}

/// How ratio-scale intervals are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioInterval {
    /// `exp` of the difference-scale endpoints.
    #[default]
    ExpEndpoints,
    /// Symmetric interval from the delta-method standard error.
    DeltaMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionKind {
    #[default]
    Natural,
    Sequential,
    Both,
}

impl DecompositionKind {
    fn natural(self) -> bool {
        matches!(self, DecompositionKind::Natural | DecompositionKind::Both)
    }

    fn sequential(self) -> bool {
        matches!(self, DecompositionKind::Sequential | DecompositionKind::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityComponent {
    pub label: ComponentLabel,
    pub point: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_value: f64,
    pub scale: ComponentScale,
    /// Outcome transform the underlying means were computed on.
    pub outcome_scale: OutcomeScale,
    /// `1 − α` of the interval.
    pub level: f64,
}

fn z_crit(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(std_normal().inverse_cdf(1.0 - alpha / 2.0))
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Two-sided Wald p-value.
pub fn wald_p_value(point: f64, se: f64) -> f64 {
    if se > 0.0 {
        (2.0 * std_normal().sf((point / se).abs())).clamp(0.0, 1.0)
    } else if point == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Influence-function values of `a − b`.
pub fn contrast_eif(a: &GammaEstimate, b: &GammaEstimate) -> Result<Vec<f64>> {
    if a.n != b.n || a.eif.len() != b.eif.len() {
        return Err(Error::Dimension(format!(
            "contrast of estimates on {} and {} rows",
            a.n, b.n
        )));
    }
    Ok(a.eif.iter().zip(&b.eif).map(|(x, y)| x - y).collect())
}

/// `a − b` on the difference scale with a Wald interval at level `1 − α`.
pub fn contrast(
    label: ComponentLabel,
    a: &GammaEstimate,
    b: &GammaEstimate,
    alpha: f64,
    outcome_scale: OutcomeScale,
) -> Result<DisparityComponent> {
    let eif = contrast_eif(a, b)?;
    let n = eif.len() as f64;
    let se = (eif.iter().map(|e| e * e).sum::<f64>() / n / n).sqrt();
    let point = a.point - b.point;
    let z = z_crit(alpha)?;
    Ok(DisparityComponent {
        label,
        point,
        se,
        ci_lo: point - z * se,
        ci_hi: point + z * se,
        p_value: wald_p_value(point, se),
        scale: if outcome_scale == OutcomeScale::PositiveIndicator {
            ComponentScale::ProbabilityDifference
        } else {
            ComponentScale::Difference
        },
        outcome_scale,
        level: 1.0 - alpha,
    })
}

/// Ratio of scaled geometric means: `exp` of a log-scale difference, with a
/// delta-method standard error `exp(ρ)·se`. The p-value is unchanged.
pub fn to_geometric_scale(c: &DisparityComponent) -> Result<DisparityComponent> {
    to_geometric_scale_with(c, RatioInterval::default())
}

pub fn to_geometric_scale_with(c: &DisparityComponent, interval: RatioInterval) -> Result<DisparityComponent> {
    if c.scale != ComponentScale::Difference || c.outcome_scale != OutcomeScale::LogPositive {
        return Err(Error::Scale(format!(
            "the geometric scale needs a difference on a log_positive outcome, got {:?} on {:?}",
            c.scale, c.outcome_scale
        )));
    }
    let ratio = c.point.exp();
    let se = ratio * c.se;
    let (ci_lo, ci_hi) = match interval {
        RatioInterval::ExpEndpoints => (c.ci_lo.exp(), c.ci_hi.exp()),
        RatioInterval::DeltaMethod => {
            let z = (c.ci_hi - c.point) / c.se;
            if c.se > 0.0 { (ratio - z * se, ratio + z * se) } else { (ratio, ratio) }
        }
    };
    Ok(DisparityComponent {
        point: ratio,
        se,
        ci_lo,
        ci_hi,
        scale: ComponentScale::GeometricRatio,
        ..c.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smearing {
    /// `mean(exp(ε))`.
    #[default]
    Empirical,
    /// `exp(σ̂²/2)` under normal errors.
    Normal,
}

/// Retransformation factor for log-scale residuals.
pub fn smearing_factor(residuals: &[f64], method: Smearing) -> Result<f64> {
    if residuals.is_empty() || residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("smearing residuals".into()));
    }
    Ok(match method {
        Smearing::Empirical => residuals.iter().map(|r| r.exp()).sum::<f64>() / residuals.len() as f64,
        Smearing::Normal => (sample_variance(residuals) / 2.0).exp(),
    })
}

/// `exp(diff)` times the smearing factor.
pub fn smearing_adjust(log_scale_diff: f64, residuals: &[f64], method: Smearing) -> Result<f64> {
    if !log_scale_diff.is_finite() {
        return Err(Error::NonFinite("log-scale difference".into()));
    }
    Ok(log_scale_diff.exp() * smearing_factor(residuals, method)?)
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// Options for a decomposition run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionConfig {
    #[serde(default)]
    pub nuisance: NuisanceConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub scale: ReportScale,
    #[serde(default)]
    pub kind: DecompositionKind,
    #[serde(default)]
    pub ratio_interval: RatioInterval,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        DecompositionConfig {
            nuisance: NuisanceConfig::default(),
            alpha: DEFAULT_ALPHA,
            scale: ReportScale::default(),
            kind: DecompositionKind::default(),
            ratio_interval: RatioInterval::default(),
        }
    }
}

impl DecompositionConfig {
    pub fn validate(&self) -> Result<()> {
        z_crit(self.alpha)?;
        self.nuisance.validate()
    }
}

/// Range and truncation count of one probability nuisance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSummary {
    pub estimand: EstimandId,
    pub point: f64,
    pub plug_in: f64,
    pub se: f64,
    /// Largest absolute centered influence-function value.
    pub max_abs_eif: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub delta: f64,
    pub probabilities: Vec<ProbabilityRange>,
    pub gammas: Vec<GammaSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub reference: String,
    pub comparison: String,
    pub group: String,
    pub outcome: String,
    pub k: usize,
    pub n_reference: usize,
    pub n_comparison: usize,
    pub scale: ReportScale,
    pub outcome_scale: OutcomeScale,
    pub alpha: f64,
    pub learner: String,
    pub crossfit_folds: Option<usize>,
    pub seed: u64,
}

/// Components of one reference/comparison pair. Natural components are not
/// additive and no aggregate of them is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub meta: ReportMeta,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub natural: Option<Vec<DisparityComponent>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sequential: Option<Vec<DisparityComponent>>,
    pub diagnostics: Diagnostics,
}

/// The estimates a decomposition is built from, keyed by estimand.
#[derive(Debug, Clone)]
pub struct GammaTable {
    pub estimates: Vec<GammaEstimate>,
    pub nuisances: Vec<NuisanceSet>,
}

impl GammaTable {
    pub fn get(&self, id: EstimandId) -> Result<&GammaEstimate> {
        self.estimates
            .iter()
            .find(|g| g.estimand == id)
            .ok_or_else(|| Error::MissingNuisance(format!("no estimate for {id}")))
    }
}

fn needed(k: usize, kind: DecompositionKind) -> Vec<EstimandId> {
    let mut ids = vec![EstimandId::Dis, EstimandId::Adv];
    if kind.natural() {
        ids.push(EstimandId::Direct);
        ids.extend((1..=k).map(EstimandId::Mediator));
    }
    if kind.sequential() {
        ids.extend((1..=k).map(EstimandId::Sequential));
    }
    ids
}

/// Fits nuisances and one-step estimates for every estimand the
/// decomposition needs, sharing propensity fits.
pub fn estimate_gammas(frame: &AnalysisFrame, cfg: &DecompositionConfig) -> Result<GammaTable> {
    let mut fitter = NuisanceFitter::new(frame, &cfg.nuisance)?;
    let mut estimates = Vec::new();
    let mut nuisances = Vec::new();
    for id in needed(frame.k(), cfg.kind) {
        let q = fitter.fit(id, &Routing::correct())?;
        estimates.push(estimate(frame.r(), frame.y(), &q)?);
        nuisances.push(q);
    }
    Ok(GammaTable {
        estimates,
        nuisances,
    })
}

/// Natural components: total, each mediator, the outcome, and residuals.
pub fn natural_components(
    t: &GammaTable,
    k: usize,
    alpha: f64,
    outcome_scale: OutcomeScale,
) -> Result<Vec<DisparityComponent>> {
    let dis = t.get(EstimandId::Dis)?;
    let adv = t.get(EstimandId::Adv)?;
    let direct = t.get(EstimandId::Direct)?;
    let c = |label, a, b| contrast(label, a, b, alpha, outcome_scale);
    let mut out = Vec::new();
    for j in 1..=k {
        out.push(c(ComponentLabel::Mediator(j), t.get(EstimandId::Mediator(j))?, dis)?);
    }
    out.push(c(ComponentLabel::OutcomeAttributed, direct, dis)?);
    out.push(c(ComponentLabel::Total, adv, dis)?);
    for j in 1..=k {
        out.push(c(ComponentLabel::ResidualMediator(j), adv, t.get(EstimandId::Mediator(j))?)?);
    }
    out.push(c(ComponentLabel::ResidualOutcome, adv, direct)?);
    Ok(out)
}

/// Cumulative components, which telescope to the total.
pub fn sequential_components(
    t: &GammaTable,
    k: usize,
    alpha: f64,
    outcome_scale: OutcomeScale,
) -> Result<Vec<DisparityComponent>> {
    let dis = t.get(EstimandId::Dis)?;
    let adv = t.get(EstimandId::Adv)?;
    let c = |label, a, b| contrast(label, a, b, alpha, outcome_scale);
    let mut out = Vec::new();
    let mut prev = adv;
    for j in 1..=k {
        let cur = t.get(EstimandId::Sequential(j))?;
        out.push(c(ComponentLabel::Sequential(j), prev, cur)?);
        prev = cur;
    }
    out.push(c(ComponentLabel::SequentialOutcome, prev, dis)?);
    out.push(c(ComponentLabel::Total, adv, dis)?);
    Ok(out)
}

fn rescale(components: Vec<DisparityComponent>, scale: ReportScale, interval: RatioInterval) -> Result<Vec<DisparityComponent>> {
    match scale {
        ReportScale::Geometric => components
            .iter()
            .map(|c| to_geometric_scale_with(c, interval))
            .collect(),
        _ => Ok(components),
    }
}

/// The frame the requested scale is computed on.
pub fn frame_for_scale(frame: &AnalysisFrame, scale: ReportScale) -> Result<AnalysisFrame> {
    match scale {
        ReportScale::Difference => Ok(frame.clone()),
        ReportScale::Geometric => {
            if frame.scale() != OutcomeScale::LogPositive {
                return Err(Error::Scale(
                    "the geometric scale needs outcome.scale = \"log_positive\"".into(),
                ));
            }
            Ok(frame.clone())
        }
        ReportScale::Probability => match frame.scale() {
            OutcomeScale::PositiveIndicator => Ok(frame.clone()),
            OutcomeScale::Raw => frame.rescaled(OutcomeScale::PositiveIndicator),
            OutcomeScale::LogPositive => {
                let positive = frame.positive().to_vec();
                let y = positive.iter().map(|&p| f64::from(u8::from(p))).collect();
                frame.with_outcome(y, positive, OutcomeScale::PositiveIndicator)
            }
        },
    }
}

fn diagnostics(t: &GammaTable, delta: f64) -> Diagnostics {
    let mut probabilities: Vec<ProbabilityRange> = Vec::new();
    for q in &t.nuisances {
        let mut add = |name: String, v: &[f64]| {
            if probabilities.iter().any(|p| p.name == name) {
                return;
            }
            let (min, max) = v
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            let truncated = q.truncated.get(&name).copied().unwrap_or(0);
            probabilities.push(ProbabilityRange {
                name,
                min,
                max,
                truncated,
            });
        };
        add("pi".into(), &q.pi);
        for (k, v) in &q.g {
            add(format!("g_{k}"), v);
        }
    }
    probabilities.sort_by(|a, b| a.name.cmp(&b.name));
    let gammas = t
        .estimates
        .iter()
        .map(|g| GammaSummary {
            estimand: g.estimand,
            point: g.point,
            plug_in: g.plug_in,
            se: g.se,
            max_abs_eif: g.eif.iter().fold(0.0, |m, e| m.max(e.abs())),
        })
        .collect();
    Diagnostics {
        delta,
        probabilities,
        gammas,
    }
}

/// Runs the whole decomposition for one reference/comparison pair.
pub fn decompose(frame: &AnalysisFrame, cfg: &DecompositionConfig) -> Result<DecompositionReport> {
    cfg.validate()?;
    let work = frame_for_scale(frame, cfg.scale)?;
    let k = work.k();
    let table = estimate_gammas(&work, cfg)?;
    let os = work.scale();
    let natural = if cfg.kind.natural() {
        Some(rescale(natural_components(&table, k, cfg.alpha, os)?, cfg.scale, cfg.ratio_interval)?)
    } else {
        None
    };
    let sequential = if cfg.kind.sequential() {
        Some(rescale(sequential_components(&table, k, cfg.alpha, os)?, cfg.scale, cfg.ratio_interval)?)
    } else {
        None
    };
    let names = work.names();
    let (n0, n1) = work.group_sizes();
    Ok(DecompositionReport {
        meta: ReportMeta {
            reference: names.reference.clone(),
            comparison: names.comparison.clone(),
            group: names.group.clone(),
            outcome: names.outcome.clone(),
            k,
            n_reference: n0,
            n_comparison: n1,
            scale: cfg.scale,
            outcome_scale: os,
            alpha: cfg.alpha,
            learner: cfg.nuisance.learner.label(),
            crossfit_folds: cfg.nuisance.crossfit_folds,
            seed: cfg.nuisance.seed,
        },
        natural,
        sequential,
        diagnostics: diagnostics(&table, cfg.nuisance.delta),
    })
}

/// Natural decomposition only.
pub fn decompose_natural(frame: &AnalysisFrame, cfg: &DecompositionConfig) -> Result<DecompositionReport> {
    decompose(frame, &DecompositionConfig { kind: DecompositionKind::Natural, ..cfg.clone() })
}

/// Sequential decomposition only.
pub fn decompose_sequential(frame: &AnalysisFrame, cfg: &DecompositionConfig) -> Result<DecompositionReport> {
    decompose(frame, &DecompositionConfig { kind: DecompositionKind::Sequential, ..cfg.clone() })
}

impl DecompositionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn sections(&self) -> Vec<(&'static str, &[DisparityComponent])> {
        let mut s = Vec::new();
        if let Some(c) = &self.natural {
            s.push(("natural", c.as_slice()));
        }
        if let Some(c) = &self.sequential {
            s.push(("sequential", c.as_slice()));
        }
        s
    }

    /// CSV rows `section,label,value,se,ci_lo,ci_hi,p_value`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_csv_all(std::slice::from_ref(self), out)
    }

    fn write_csv_rows<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        let io = |e: csv::Error| Error::Csv { line: 0, message: e.to_string() };
        let pair = format!("{} vs {}", self.meta.reference, self.meta.comparison);
        for (name, comps) in self.sections() {
            for c in comps {
                w.write_record([
                    pair.clone(),
                    name.to_string(),
                    c.label.to_string(),
                    c.point.to_string(),
                    c.se.to_string(),
                    c.ci_lo.to_string(),
                    c.ci_hi.to_string(),
                    c.p_value.to_string(),
                ])
                .map_err(io)?;
            }
        }
        Ok(())
    }

    /// Fixed-width table with value, interval and p-value columns.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = &self.meta;
        let _ = writeln!(
            s,
            "{} = {} (R=0, n={}) vs {} (R=1, n={}); K = {}; scale: {:?}",
            m.group, m.reference, m.n_reference, m.comparison, m.n_comparison, m.k, m.scale
        );
        let pct = (1.0 - m.alpha) * 100.0;
        for (name, comps) in self.sections() {
            let _ = writeln!(s, "\n[{name}]");
            let _ = writeln!(
                s,
                "{:<26} {:>10} {:>23} {:>9}",
                "Disparity",
                "Value",
                format!("{pct:.0}% CI"),
                "p-value"
            );
            for c in comps {
                let p = if c.p_value < 0.001 { "<0.001".to_string() } else { format!("{:.3}", c.p_value) };
                let _ = writeln!(
                    s,
                    "{:<26} {:>10.3} {:>10.3} --- {:>8.3} {:>9}",
                    c.label.to_string(),
                    c.point,
                    c.ci_lo,
                    c.ci_hi,
                    p
                );
            }
        }
        s
    }
}

/// Writes several reports into one CSV with a single header.
pub fn write_csv_all<W: std::io::Write>(reports: &[DecompositionReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Csv { line: 0, message: e.to_string() };
    w.write_record(["comparison", "section", "label", "value", "se", "ci_lo", "ci_hi", "p_value"])
        .map_err(io)?;
    for r in reports {
        r.write_csv_rows(&mut w)?;
    }
    w.flush().map_err(|e| Error::Csv { line: 0, message: e.to_string() })?;
    Ok(())
}
