use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("data error at sample {index}: {reason}")]
    Data { index: usize, reason: String },

    #[error("index error: link ({source_row}, {dest_row}) out of range for {source_rows} source rows / {dest_rows} output rows")]
    Link {
        source_row: usize,
        dest_row: usize,
        source_rows: usize,
        dest_rows: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("optimizer error in parameter block `{block}`: {reason}")]
    Optimizer { block: String, reason: String },

    #[error("invalid value: {0}")]
    Value(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: at byte offset {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("model file {path}: {reason}")]
    Model { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
