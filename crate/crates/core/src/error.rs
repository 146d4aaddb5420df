use thiserror::Error;

/// Errors raised by the library.
///
/// The variants mirror the failure classes the CLI maps onto exit codes:
/// usage and precondition problems are caller mistakes, domain and numeric
/// errors come from evaluating a field or kernel where it is not defined.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: non-finite value {value} at node {node} ({coords:?})")]
    NonFinite {
        node: usize,
        coords: Vec<f64>,
        value: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("field `{0}` has no exact derivative rule")]
    NoExactRule(String),

    #[error("evaluation cap exceeded: |x| = {norm} > r_eval = {cap}")]
    BeyondEvalRadius { norm: f64, cap: f64 },
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Usage(msg.into()))
}
