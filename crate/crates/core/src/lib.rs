//! One-step influence-function estimators for decomposing group disparities
//! through ordered mediator blocks.
//!
//! The estimator and oracle layers are generic over [`scalar::Scalar`]; the
//! aliases below fix them at `f64`, which is what the fitting pipeline uses.

pub mod data;
pub mod decomposition;
pub mod error;
pub mod estimand;
pub mod estimators;
pub mod folds;
pub mod learners;
pub mod linalg;
pub mod nuisance;
pub mod oracle;
pub mod scalar;
pub mod simplex;
pub mod simulation;

pub use data::{AnalysisFrame, Dataset, OutcomeScale, RoleSpec};
pub use decomposition::{decompose, DecompositionConfig, DecompositionReport, DisparityComponent};
pub use error::{Error, Result};
pub use estimand::{ArmVector, EstimandId};
pub use scalar::Scalar;

pub type GammaEstimate = estimators::GammaEstimate<f64>;
pub type NuisanceSet = nuisance::NuisanceSet<f64>;
pub type LevelFit = nuisance::LevelFit<f64>;
pub type OneStep = oracle::OneStep<f64>;
pub type Support = oracle::Support<f64>;
pub type SimplexSolution = simplex::SimplexSolution<f64>;
