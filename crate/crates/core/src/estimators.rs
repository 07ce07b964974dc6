//! One-step estimators of the counterfactual means.
//!
//! Each estimator returns per-row summands `φᵢ`; the estimate is their mean
//! and the centered summands are the estimated influence-function values.

use serde::{Deserialize, Serialize};

use crate::data::AnalysisFrame;
use crate::error::{Error, Result};
use crate::estimand::{ArmVector, EstimandId};
use crate::nuisance::NuisanceSet;
use crate::scalar::{mean, Scalar};

/// A one-step estimate with its influence-function values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate<T = f64> {
    pub estimand: EstimandId,
    pub point: T,
    /// Mean of the level-0 regression (the uncorrected plug-in).
    pub plug_in: T,
    /// Centered summands.
    pub eif: Vec<T>,
    /// `sqrt(mean(eif²) / n)`.
    pub se: T,
    pub n: usize,
}

impl<T: Scalar> GammaEstimate<T> {
    pub fn from_summands(estimand: EstimandId, summands: &[T], plug_in_terms: &[T]) -> Result<Self> {
        let n = summands.len();
        if n == 0 {
            return Err(Error::InvalidFrame("no rows to estimate from".into()));
        }
        if summands.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "one-step summands for {estimand}; check the truncation level"
            )));
        }
        let point = mean(summands);
        let eif: Vec<T> = summands.iter().map(|&s| s - point).collect();
        let ms = eif.iter().map(|&e| e * e).sum::<T>() / T::from_usize_lossy(n);
        Ok(GammaEstimate {
            estimand,
            point,
            plug_in: mean(plug_in_terms),
            eif,
            se: (ms / T::from_usize_lossy(n)).sqrt(),
            n,
        })
    }
}

fn check_len<T>(n: usize, parts: &[&[T]]) -> Result<()> {
    if parts.iter().any(|p| p.len() != n) {
        return Err(Error::Dimension("estimator inputs differ in length".into()));
    }
    Ok(())
}

fn ind<T: Scalar>(r: u8, arm: u8) -> T {
    if r == arm {
        T::one()
    } else {
        T::zero()
    }
}

/// AIPW summands for `E[E[Y | R = arm, X]]`:
/// `𝟙(R=arm)/P(R=arm|X) · (Y − m) + m`.
pub fn aipw_summands<T: Scalar>(arm: u8, r: &[u8], y: &[T], pi: &[T], m: &[T]) -> Result<Vec<T>> {
    check_len(r.len(), &[y, pi, m])?;
    Ok((0..r.len())
        .map(|i| {
            let p = if arm == 1 { pi[i] } else { T::one() - pi[i] };
            ind::<T>(r[i], arm) / p * (y[i] - m[i]) + m[i]
        })
        .collect())
}

/// Outcome-shifted mean, mediators at reference:
/// `R/(1−π)·(1−g_K)/g_K·(Y−μ_K) + (1−R)/(1−π)·(μ_K − 𝓒) + 𝓒`.
pub fn direct_summands<T: Scalar>(
    r: &[u8],
    y: &[T],
    pi: &[T],
    g_k: &[T],
    mu_k: &[T],
    c: &[T],
) -> Result<Vec<T>> {
    check_len(r.len(), &[y, pi, g_k, mu_k, c])?;
    let one = T::one();
    Ok((0..r.len())
        .map(|i| {
            let q = one - pi[i];
            ind::<T>(r[i], 1) / q * ((one - g_k[i]) / g_k[i]) * (y[i] - mu_k[i])
                + ind::<T>(r[i], 0) / q * (mu_k[i] - c[i])
                + c[i]
        })
        .collect())
}

/// Mediator-`k`-shifted mean (four-term form). With `g_prev = π` and
/// `c = b` it also covers `k = 1`.
#[allow(clippy::too_many_arguments)]
pub fn mediator_summands<T: Scalar>(
    r: &[u8],
    y: &[T],
    pi: &[T],
    g_prev: &[T],
    g_k: &[T],
    mu_k: &[T],
    b_k: &[T],
    c: &[T],
) -> Result<Vec<T>> {
    check_len(r.len(), &[y, pi, g_prev, g_k, mu_k, b_k, c])?;
    let one = T::one();
    Ok((0..r.len())
        .map(|i| {
            let q = one - pi[i];
            let back = (one - g_prev[i]) / g_prev[i];
            ind::<T>(r[i], 0) / q * (g_k[i] / (one - g_k[i])) * back * (y[i] - mu_k[i])
                + ind::<T>(r[i], 1) / q * back * (mu_k[i] - b_k[i])
                + ind::<T>(r[i], 0) / q * (b_k[i] - c[i])
                + c[i]
        })
        .collect())
}

/// First-mediator-shifted mean:
/// `(1−R)/π·g₁/(1−g₁)·(Y−μ₁) + R/π·(μ₁ − 𝓒) + 𝓒`, with `𝓒` fit among `R = 1`.
pub fn mediator1_summands<T: Scalar>(
    r: &[u8],
    y: &[T],
    pi: &[T],
    g_1: &[T],
    mu_1: &[T],
    c: &[T],
) -> Result<Vec<T>> {
    check_len(r.len(), &[y, pi, g_1, mu_1, c])?;
    let one = T::one();
    Ok((0..r.len())
        .map(|i| {
            ind::<T>(r[i], 0) / pi[i] * (g_1[i] / (one - g_1[i])) * (y[i] - mu_1[i])
                + ind::<T>(r[i], 1) / pi[i] * (mu_1[i] - c[i])
                + c[i]
        })
        .collect())
}

fn odds<T: Scalar>(g: T) -> T {
    g / (T::one() - g)
}

/// Summands for an arbitrary arm vector.
///
/// Level `b` (regression stratum `R = a`) contributes
/// `𝟙(R=a)/P(R=a|X) · W_b · (θ_child − θ_b)` where `W_b` is the mediator
/// density ratio over indices `≤ b`, expressed through odds of `g`.
pub fn general_summands<T: Scalar>(r: &[u8], y: &[T], q: &NuisanceSet<T>) -> Result<Vec<T>> {
    let n = r.len();
    check_len(n, &[y, &q.pi])?;
    let arms: &ArmVector = &q.arms;
    let plan = arms.levels();
    if plan.len() != q.levels.len() || plan.iter().zip(&q.levels).any(|(a, b)| *a != b.level) {
        return Err(Error::MissingNuisance(format!(
            "nuisance levels do not match the plan for {}",
            q.estimand
        )));
    }
    let one = T::one();
    let mut out = vec![T::zero(); n];
    for (li, level) in plan.iter().enumerate() {
        let theta = &q.levels[li].values;
        let child: &[T] = if li == 0 { y } else { &q.levels[li - 1].values };
        check_len(n, &[theta, child])?;
        let runs = arms.runs(level.b, level.arm);
        let leading = runs.first().is_some_and(|run| run.start == 1);
        let mut factors: Vec<(&[T], &[T], bool)> = Vec::new();
        for run in &runs {
            let prev = q.g(run.start - 1)?;
            let end = q.g(run.end)?;
            factors.push((end, prev, run.arm == 1));
        }
        for i in 0..n {
            if r[i] != level.arm {
                continue;
            }
            // With a leading run, π/(1−π) from the run cancels against the
            // stratum probability.
            let arm_prob = if (level.arm == 1) != leading { q.pi[i] } else { one - q.pi[i] };
            let mut w = one / arm_prob;
            for (fi, &(end, prev, up)) in factors.iter().enumerate() {
                let skip_prev = leading && fi == 0;
                let ratio = if up {
                    let head = odds(end[i]);
                    if skip_prev { head } else { head * ((one - prev[i]) / prev[i]) }
                } else {
                    let head = (one - end[i]) / end[i];
                    if skip_prev { head } else { head * odds(prev[i]) }
                };
                w = w * ratio;
            }
            out[i] = out[i] + w * (child[i] - theta[i]);
        }
    }
    let base = q.centering();
    for i in 0..n {
        out[i] = out[i] + base[i];
    }
    Ok(out)
}

/// Summands for `q.estimand`, using the closed forms where one exists.
pub fn summands<T: Scalar>(r: &[u8], y: &[T], q: &NuisanceSet<T>) -> Result<Vec<T>> {
    let k_total = q.arms.k();
    if q.estimand.arms(k_total)? != q.arms {
        return Err(Error::MissingNuisance(format!(
            "nuisance set arms do not match {}",
            q.estimand
        )));
    }
    match q.estimand {
        EstimandId::Dis => aipw_summands(0, r, y, &q.pi, q.centering()),
        EstimandId::Adv => aipw_summands(1, r, y, &q.pi, q.centering()),
        EstimandId::Direct | EstimandId::Sequential(_) if q.arms.mediators.iter().all(|&a| a == 0) => {
            direct_summands(r, y, &q.pi, q.g(k_total)?, q.mu(), q.centering())
        }
        EstimandId::Mediator(1) => mediator1_summands(r, y, &q.pi, q.g(1)?, q.mu(), q.centering()),
        EstimandId::Mediator(k) => mediator_summands(
            r,
            y,
            &q.pi,
            q.g(k - 1)?,
            q.g(k)?,
            q.mu(),
            q.level(k - 1)?,
            q.centering(),
        ),
        _ => general_summands(r, y, q),
    }
}

/// One-step estimate of `q.estimand` from observed `(R, Y)` and nuisances.
pub fn estimate<T: Scalar>(r: &[u8], y: &[T], q: &NuisanceSet<T>) -> Result<GammaEstimate<T>> {
    let s = summands(r, y, q)?;
    GammaEstimate::from_summands(q.estimand, &s, q.centering())
}

fn estimate_kind(frame: &AnalysisFrame, q: &NuisanceSet, ok: bool) -> Result<GammaEstimate> {
    if !ok {
        return Err(Error::MissingNuisance(format!(
            "nuisance set was fit for {}",
            q.estimand
        )));
    }
    if q.n() != frame.n() {
        return Err(Error::Dimension("nuisance set and frame differ in rows".into()));
    }
    estimate(frame.r(), frame.y(), q)
}

pub fn estimate_gamma_dis(frame: &AnalysisFrame, q: &NuisanceSet) -> Result<GammaEstimate> {
    estimate_kind(frame, q, q.estimand == EstimandId::Dis)
}

pub fn estimate_gamma_adv(frame: &AnalysisFrame, q: &NuisanceSet) -> Result<GammaEstimate> {
    estimate_kind(frame, q, q.estimand == EstimandId::Adv)
}

pub fn estimate_gamma_direct(frame: &AnalysisFrame, q: &NuisanceSet) -> Result<GammaEstimate> {
    estimate_kind(frame, q, q.estimand == EstimandId::Direct)
}

pub fn estimate_gamma_mediator(frame: &AnalysisFrame, q: &NuisanceSet, k: usize) -> Result<GammaEstimate> {
    estimate_kind(frame, q, q.estimand == EstimandId::Mediator(k))
}

pub fn estimate_gamma_sequential(
    frame: &AnalysisFrame,
    q: &NuisanceSet,
    k: usize,
) -> Result<GammaEstimate> {
    estimate_kind(frame, q, q.estimand == EstimandId::Sequential(k))
}
