use crate::exprlang::{EvalError, ParseError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("singular {block} Jacobian block (|det| = {det:e})")]
    SingularJacobian { block: &'static str, det: f64 },
    #[error("inverse map does not invert the forward map (|J·J⁻¹ − I| = {0:e})")]
    InverseMismatch(f64),
    #[error("point outside domain: {0}")]
    OutsideDomain(String),
    #[error("near-singular metric (|det| = {0:e})")]
    SingularMetric(f64),
    #[error("metric is not symmetric: {0}")]
    AsymmetricMetric(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid chart change: {0}")]
    InvalidChange(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("unknown catalog entry `{0}`")]
    UnknownCatalog(String),
    #[error("integration failed at t = {t}: {source}")]
    Integration { t: f64, source: Box<Error> },
    #[error("solver diverged at iteration {iteration}: residual {residual:e} exceeds 10× the initial {initial:e}")]
    Divergence {
        iteration: usize,
        residual: f64,
        initial: f64,
    },
    #[error("scenario error at {pointer}: {message}")]
    Scenario { pointer: String, message: String },
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
