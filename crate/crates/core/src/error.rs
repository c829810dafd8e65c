//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data or configuration violates a documented precondition.
    /// The message names the first offending row/field where applicable.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Cox partial likelihood has no finite maximizer (monotone likelihood)
    /// or Newton iteration failed to converge.
    #[error("partial likelihood degenerate: {0}")]
    DegenerateLikelihood(String),

    /// Requested horizon exceeds the observed follow-up range.
    #[error("tau outside support: {0}")]
    TauOutsideSupport(String),

    /// No feasible fold assignment found within the resampling budget.
    #[error("cross-fit plan infeasible: {0}")]
    PlanInfeasible(String),

    /// Too few effective observations for the requested regression.
    #[error("underdetermined: {0}")]
    Underdetermined(String),

    /// A learner could not produce a usable fit.
    #[error("learner failure: {0}")]
    LearnerFailure(String),

    /// Leave-one-out (or add-one) re-estimation failed for a subject.
    #[error("jackknife failed leaving out subject {subject}: {reason}")]
    JackknifeSubject { subject: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
