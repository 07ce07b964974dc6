use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

/// Basis expansion applied before a base learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePolicy {
    #[default]
    MainEffects,
    /// Main effects plus all products `xᵢxⱼ`, `i < j`.
    PairwiseInteractions,
    /// Pairwise interactions plus squares of non-binary columns.
    Quadratic,
}

/// Expansion fixed at fit time, so training and prediction designs agree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    policy: FeaturePolicy,
    squared: Vec<usize>,
}

impl Expansion {
    /// Squares are only added for columns that are not 0/1 in `x`.
    pub fn fit(x: &Matrix, policy: FeaturePolicy) -> Self {
        let squared = match policy {
            FeaturePolicy::Quadratic => (0..x.ncols())
                .filter(|&j| {
                    (0..x.nrows()).any(|i| {
                        let v = x.get(i, j);
                        v != 0.0 && v != 1.0
                    })
                })
                .collect(),
            _ => Vec::new(),
        };
        Expansion { policy, squared }
    }

    pub fn policy(&self) -> FeaturePolicy {
        self.policy
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let p = x.ncols();
        if self.policy == FeaturePolicy::MainEffects {
            return x.clone();
        }
        let pairs = p * p.saturating_sub(1) / 2;
        let cols = p + pairs + self.squared.len();
        x.map_rows(cols, |src, dst| {
            dst[..p].copy_from_slice(src);
            let mut c = p;
            for a in 0..p {
                for b in a + 1..p {
                    dst[c] = src[a] * src[b];
                    c += 1;
                }
            }
            for &j in &self.squared {
                dst[c] = src[j] * src[j];
                c += 1;
            }
        })
    }
}

/// One-shot expansion using `x` itself to choose the squared columns.
pub fn expand(x: &Matrix, policy: FeaturePolicy) -> Matrix {
    Expansion::fit(x, policy).apply(x)
}
