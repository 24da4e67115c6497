use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("dimension mismatch at node {node} ({op}): {detail}")]
    Dimension { node: usize, op: &'static str, detail: String },

    #[error("input `{0}` is not bound")]
    MissingInput(String),

    #[error("`{0}` is not an input of the graph")]
    UnknownParameter(String),

    #[error("output must be a scalar to differentiate, found shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sparsity {0} is outside [0, 1]")]
    SparsityRange(f64),

    #[error("target of {target} pruned weights is below the {current} already pruned")]
    Monotonicity { target: usize, current: usize },

    #[error("training diverged: non-finite loss at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("no checkpoint stored for iteration {0}")]
    MissingCheckpoint(usize),

    #[error("network has {paths} input-output paths, above the enumeration limit {limit}")]
    TooManyPaths { paths: u128, limit: u128 },

    #[error("degenerate network: {0}")]
    Degenerate(String),

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}
