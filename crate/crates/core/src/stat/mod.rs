//! Values with uncertainty and first-order error propagation.

mod expr;
mod measurement;

pub use expr::{eval_expression, BinOp, Bindings, Expr};
pub use measurement::{Measurement, PropagationPolicy};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatError {
    #[error("no samples")]
    EmptySampleSet,
    #[error("division by a measurement with zero mean")]
    DivisionByZeroMean,
    #[error("propagated variance is negative ({0}); check the supplied covariance")]
    NegativeVariance(f64),
    #[error("negative standard deviation {0}")]
    NegativeSd(f64),
    #[error("non-finite value")]
    NonFinite,
    #[error("unbound name `{0}`")]
    UnboundName(String),
    #[error("expression: {0}")]
    Parse(String),
}
