//! Covariate-adjusted estimation of treatment effects for survival endpoints
//! in randomized trials.
//!
//! The estimators here start from an unadjusted effect estimate (log hazard
//! ratio, survival difference, restricted-mean survival difference, or mean
//! difference) and subtract an augmentation term `(1/n) Σ (A_i - π) b(W_i)`
//! built from baseline covariates. Randomization guarantees consistency for
//! any augmentation function `b`; the variance-optimal choice is estimated by
//! regression learners (linear, spline-additive, tree, random forest, or a
//! cross-validated super learner) on a weighted least-squares problem derived
//! from the estimated influence function of the unadjusted estimator.
//! Optional K-fold cross-fitting removes the re-substitution bias of the
//! plug-in variance estimate.
//!
//! Numeric layers are generic over the scalar type through [`Scalar`]
//! (any `num_traits::Float` with the usual extras); the crate-root aliases
//! pin the default `f64` instantiation used by the simulation harness and
//! the command-line tool.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod learners;
mod linalg;
pub mod measures;
pub mod scalar;
pub mod sim;
pub mod stats;
pub mod step;
pub mod survival;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default concrete scalar for the statistical pipeline.
pub type Real = f64;

/// `StepFunction` at the default scalar.
pub type Step = step::StepFunction<Real>;
/// `TrialDataset` at the default scalar.
pub type Dataset = dataset::TrialDataset<Real>;
/// `EffectMeasureSpec` at the default scalar.
pub type Measure = measures::EffectMeasureSpec<Real>;
/// `InfluenceVector` at the default scalar.
pub type Influence = measures::InfluenceVector<Real>;
/// `RegressionProblem` at the default scalar.
pub type Problem = learners::RegressionProblem<Real>;
/// `FittedLearner` at the default scalar.
pub type Fitted = learners::FittedLearner<Real>;
/// `EstimateReport` at the default scalar.
pub type Report = augment::EstimateReport<Real>;
