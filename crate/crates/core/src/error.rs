use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine and its building blocks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: embedding has dimension {found}, expected {expected}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: label {label} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        line: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("seed size {seed_size} exceeds pool of {pool_size} instances")]
    SeedTooLarge { seed_size: usize, pool_size: usize },

    #[error("embedding dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("class {0} has zero total weight")]
    EmptyClass(usize),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("labeled pool is empty")]
    EmptyLabeledPool,

    #[error("instance {0} is not in the unlabeled pool")]
    NotUnlabeled(usize),

    #[error("instance {0} is already labeled")]
    AlreadyLabeled(usize),

    #[error("unknown {kind} `{value}`; expected one of: {expected}")]
    UnknownVariant {
        kind: &'static str,
        value: String,
        expected: String,
    },

    #[error("curves were produced by different configs ({0} vs {1})")]
    ConfigMismatch(String, String),

    #[error("{0}")]
    Metric(String),

    #[error("engine is not waiting for labels")]
    NotAwaitingLabels,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
