use alloc::string::String;
use alloc::vec::Vec;

/// Every fallible operation in the core reports one of these.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: non-positive argument {value} at index {index}")]
    NonPositiveLog {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("backward called twice on the same tape")]
    TapeConsumed,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("parameter `{0}` has no gradient; run backward before stepping")]
    MissingGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("ingestion: {0}")]
    Ingest(String),
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("R² undefined: ground truth has zero variance")]
    ZeroVariance,
    #[error("regression loss needs at least one labeled district")]
    NoLabeledDistricts,
    #[error("training diverged at epoch {epoch}: info={info}, reg={reg}, total={total}")]
    Diverged {
        epoch: usize,
        info: f64,
        reg: f64,
        total: f64,
    },
    #[error("exact Shapley enumeration supports at most {max} features, got {got}; use the sampled estimator")]
    TooManyFeatures { max: usize, got: usize },
    #[error("attribution: {0}")]
    Attribution(String),
}

pub type Result<T> = core::result::Result<T, Error>;
