//! Target functionals and the regression plan each one implies.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which counterfactual mean is targeted.
///
/// Each identifies `γ = E_X ∫ E[Y | m̄, R=r₀, X] ∏ₖ dP(mₖ | m̄ₖ₋₁, R=aₖ, X)`
/// for a particular arm vector `(r₀; a₁, …, a_K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "snake_case")]
pub enum EstimandId {
    /// Everything at the reference group: `(0; 0, …, 0)`.
    Dis,
    /// Everything at the comparison group: `(1; 1, …, 1)`.
    Adv,
    /// Outcome law shifted, mediators at reference: `(1; 0, …, 0)`.
    Direct,
    /// Only mediator `k` shifted: `(0; 𝟙ₖ)`.
    Mediator(usize),
    /// Mediators `1..=k` at reference, the rest and the outcome shifted.
    Sequential(usize),
}

impl EstimandId {
    pub fn arms(&self, k_total: usize) -> Result<ArmVector> {
        let check = |k: usize| {
            if k == 0 || k > k_total {
                Err(Error::Config(format!(
                    "{self} needs 1 ≤ k ≤ {k_total}"
                )))
            } else {
                Ok(())
            }
        };
        let (r0, mediators) = match *self {
            EstimandId::Dis => (0, vec![0; k_total]),
            EstimandId::Adv => (1, vec![1; k_total]),
            EstimandId::Direct => (1, vec![0; k_total]),
            EstimandId::Mediator(k) => {
                check(k)?;
                let mut a = vec![0; k_total];
                a[k - 1] = 1;
                (0, a)
            }
            EstimandId::Sequential(k) => {
                check(k)?;
                (1, (1..=k_total).map(|j| u8::from(j > k)).collect())
            }
        };
        ArmVector::new(r0, mediators)
    }

    /// Natural-decomposition estimands for `K` mediators.
    pub fn natural(k_total: usize) -> Vec<EstimandId> {
        let mut v = vec![EstimandId::Dis, EstimandId::Adv, EstimandId::Direct];
        v.extend((1..=k_total).map(EstimandId::Mediator));
        v
    }

    /// Sequential-decomposition estimands for `K` mediators.
    pub fn sequential(k_total: usize) -> Vec<EstimandId> {
        let mut v = vec![EstimandId::Dis, EstimandId::Adv];
        v.extend((1..=k_total).map(EstimandId::Sequential));
        v
    }
}

impl fmt::Display for EstimandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimandId::Dis => write!(f, "gamma_dis"),
            EstimandId::Adv => write!(f, "gamma_adv"),
            EstimandId::Direct => write!(f, "gamma_direct"),
            EstimandId::Mediator(k) => write!(f, "gamma_mediator_{k}"),
            EstimandId::Sequential(k) => write!(f, "gamma_sequential_{k}"),
        }
    }
}

/// One nested regression: the pseudo-outcome is regressed on `(X, M̄_b)`
/// among rows with `R = arm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Level {
    pub b: usize,
    pub arm: u8,
}

/// A maximal run `start..=end` of mediators whose arm `a` differs from the
/// stratum arm of some level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub start: usize,
    pub end: usize,
    pub arm: u8,
}

/// `(r₀; a₁, …, a_K)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArmVector {
    pub r0: u8,
    pub mediators: Vec<u8>,
}

impl ArmVector {
    pub fn new(r0: u8, mediators: Vec<u8>) -> Result<Self> {
        if r0 > 1 || mediators.iter().any(|&a| a > 1) {
            return Err(Error::Config("arms must be 0 or 1".into()));
        }
        if mediators.is_empty() {
            return Err(Error::Config("at least one mediator arm".into()));
        }
        Ok(ArmVector { r0, mediators })
    }

    pub fn k(&self) -> usize {
        self.mediators.len()
    }

    /// Arm of index `j` in `1..=K+1`; index `K+1` is the outcome.
    pub fn arm(&self, j: usize) -> u8 {
        if j == self.k() + 1 {
            self.r0
        } else {
            self.mediators[j - 1]
        }
    }

    /// Nested regressions from the top down. Consecutive indices that share
    /// an arm collapse into one regression, so levels sit at `0` and at every
    /// `b` with `a_b ≠ a_{b+1}`.
    pub fn levels(&self) -> Vec<Level> {
        let k = self.k();
        let mut out: Vec<Level> = (1..=k)
            .rev()
            .filter(|&b| self.arm(b) != self.arm(b + 1))
            .map(|b| Level {
                b,
                arm: self.arm(b + 1),
            })
            .collect();
        out.push(Level {
            b: 0,
            arm: self.arm(1),
        });
        out
    }

    /// Runs among indices `1..=b` whose arm differs from `arm`.
    pub fn runs(&self, b: usize, arm: u8) -> Vec<Run> {
        let mut runs = Vec::new();
        let mut j = 1;
        while j <= b {
            if self.arm(j) == arm {
                j += 1;
                continue;
            }
            let start = j;
            while j < b && self.arm(j + 1) != arm {
                j += 1;
            }
            runs.push(Run {
                start,
                end: j,
                arm: 1 - arm,
            });
            j += 1;
        }
        runs
    }

    /// Mediator-propensity indices `k ≥ 1` used by the weights.
    pub fn g_indices(&self) -> Vec<usize> {
        let mut idx = Vec::new();
        for level in self.levels() {
            for run in self.runs(level.b, level.arm) {
                idx.push(run.end);
                if run.start > 1 {
                    idx.push(run.start - 1);
                }
            }
        }
        idx.sort_unstable();
        idx.dedup();
        idx
    }
}
