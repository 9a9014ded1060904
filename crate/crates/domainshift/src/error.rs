//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or parameter dimension does not match what the operation requires.
    #[error("{op}: {dim} mismatch (expected {expected}, got {actual})")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: String,
        actual: String,
    },

    /// The operation would produce a zero-sized output.
    #[error("{op}: empty output ({detail})")]
    EmptyOutput { op: &'static str, detail: String },

    /// A configuration field is out of its documented range.
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {reason}")]
    ImageDecode { path: PathBuf, reason: String },

    #[error("dataset too small: {reason}")]
    DatasetTooSmall { reason: String },

    #[error("no class folders under {root}")]
    NoClasses { root: PathBuf },

    #[error("unknown class {name:?}")]
    UnknownClass { name: String },

    #[error("class {name:?} has only {count} entries, too few for the requested split")]
    ClassTooSmall { name: String, count: usize },

    #[error("class vocabulary mismatch: {detail}")]
    VocabularyMismatch { detail: String },

    #[error("weight file {path}: {reason}")]
    WeightFormat { path: PathBuf, reason: String },

    #[error("weight file {path} holds a different architecture: {reason}")]
    ArchitectureMismatch { path: PathBuf, reason: String },

    #[error("training failed: {reason}")]
    Training { reason: String },

    /// Wraps a failure with the experiment stage it occurred in.
    #[error("stage {stage:?} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tag an error with an experiment stage name.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the failure happened while fitting parameters (as opposed to
    /// bad input data or configuration). CLI exit codes branch on this.
    pub fn is_training_failure(&self) -> bool {
        match self {
            Error::Training { .. } => true,
            Error::Stage { source, .. } => source.is_training_failure(),
            _ => false,
        }
    }
}
