//! Gamma-frailty joint model for recurrent and terminal events: marginal
//! likelihood, maximum likelihood fitting and Wald tests.

mod fit;
mod likelihood;
mod optim;
pub mod quadrature;

use thiserror::Error;

pub use fit::{fit_jfm, treatment_contrast, wald_joint, wald_univariate, FitOptions, JfmFit, JointWald, UnivariateWald};
pub use likelihood::{marginal_loglik, AlphaSpec, BaselineFamily, JfmModel, JfmParams, JfmSpec, Layout};
pub use optim::{maximize, BfgsOptions, BfgsResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JfmError {
    #[error("not converged after {iterations} iterations (gradient sup-norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },
    #[error("observed information is not positive definite")]
    SingularHessian,
    #[error("log-likelihood is not finite")]
    NonFiniteLikelihood,
    #[error("parameters outside the valid domain")]
    InvalidParams,
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("subject {id} lacks covariate {name}")]
    MissingCovariate { id: String, name: String },
    #[error("no {0} events in the data")]
    NoEvents(&'static str),
    #[error("no standard error available for {0}")]
    MissingSE(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("contrast matrix is rank deficient")]
    RankDeficientC,
    #[error("covariance block of the contrast is singular")]
    SingularBlock,
    #[error("contrast has {got} columns, model has {expected} parameters")]
    DimensionMismatch { got: usize, expected: usize },
}

impl JfmError {
    /// Short label used in failure tallies and CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            JfmError::NotConverged { .. } => "NotConverged",
            JfmError::SingularHessian => "SingularHessian",
            JfmError::NonFiniteLikelihood => "NonFiniteLikelihood",
            JfmError::InvalidParams => "InvalidParams",
            JfmError::InvalidSpec(_) => "InvalidSpec",
            JfmError::MissingCovariate { .. } => "MissingCovariate",
            JfmError::NoEvents(_) => "NoEvents",
            JfmError::MissingSE(_) => "MissingSE",
            JfmError::UnknownParameter(_) => "UnknownParameter",
            JfmError::RankDeficientC => "RankDeficientC",
            JfmError::SingularBlock => "SingularBlock",
            JfmError::DimensionMismatch { .. } => "DimensionMismatch",
        }
    }
}
