use thiserror::Error;

use crate::network::NodeId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),

    #[error("{what}: denominator leading coefficient must be exactly 1, got {got}")]
    NonMonic { what: String, got: f64 },

    #[error("{what}: unstable denominator (root magnitude {magnitude:.6})")]
    Unstable { what: String, magnitude: f64 },

    #[error("{0}: module must be strictly proper (zero constant numerator term)")]
    NotStrictlyProper(String),

    #[error("invalid node index {node} (network has {count} nodes)")]
    InvalidNode { node: usize, count: usize },

    #[error("module {0} is not part of the network")]
    MissingModule(String),

    #[error("missing node {0} is the input of the target module; the target is not identifiable up to scale")]
    MissingTargetInput(NodeId),

    #[error("predictor model rejected: {condition} violated ({witness})")]
    ConditionViolated { condition: String, witness: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular kernel for block {0}: beta or lambda is zero")]
    SingularKernel(String),

    #[error("singular conditional precision for block {block} (smallest eigenvalue {min_eigenvalue:e})")]
    SingularPrecision { block: String, min_eigenvalue: f64 },

    #[error("Gibbs sweep {sweep}: {source}")]
    Sweep {
        sweep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite objective at EM iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn malformed(msg: impl Into<String>) -> Self {
        Error::Malformed(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
