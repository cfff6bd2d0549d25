use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{path}: line {line}: expected {expected} columns, found {found}")]
    RaggedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: line {line}, column {column}: not a number: {value:?}")]
    NonNumeric {
        path: PathBuf,
        line: usize,
        column: usize,
        value: String,
    },

    #[error("{path}: label column {column} not found")]
    MissingLabelColumn { path: PathBuf, column: String },

    #[error("{path}: bad magic number 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("example count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("checkpoint: bad magic {found:?}, expected \"STEC\"")]
    CheckpointMagic { found: [u8; 4] },

    #[error("checkpoint: unsupported format version {found}, expected {expected}")]
    CheckpointVersion { expected: u16, found: u16 },

    #[error("checkpoint: truncated while reading {what}")]
    CheckpointTruncated { what: &'static str },

    #[error("checkpoint: corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: u64, batch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl Into<String>, right: impl Into<String>) -> Self {
        Error::Shape {
            op,
            left: left.into(),
            right: right.into(),
        }
    }
}
