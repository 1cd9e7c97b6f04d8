use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: argument {value} outside the domain ({domain})")]
    Domain {
        op: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("{what}: index {index} out of range 0..{bound}")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("{0}: empty batch")]
    EmptyBatch(&'static str),

    #[error("moments of the target distribution are undefined: {0}")]
    UndefinedMoments(String),

    #[error("divergence is infinite: {0}")]
    Divergence(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {diagnostics}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        diagnostics: String,
    },

    #[error("nothing left to prune")]
    Exhausted,

    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    Magic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("{path}: parse error at row {row}, column {col}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
