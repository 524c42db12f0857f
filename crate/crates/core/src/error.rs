use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {0} has no proxy")]
    UnknownClass(usize),

    #[error("batch contains a single class ({0}); the contrastive loss is degenerate")]
    DegenerateBatch(usize),

    #[error("sample {sample}: {have} confidence records, {need} required")]
    IncompleteRecords {
        sample: u64,
        have: usize,
        need: usize,
    },

    #[error("sample {sample} already has a confidence record for epoch {epoch}")]
    DuplicateRecord { sample: u64, epoch: usize },

    #[error("training diverged at task {task}: non-finite {what}; lower the learning rate or enable normalize")]
    Diverged { task: usize, what: &'static str },

    #[error("{0} is undefined")]
    Undefined(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: malformed file: {detail}")]
    Format { path: PathBuf, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
