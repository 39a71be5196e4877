//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by dataset ingestion, kernel construction, clustering,
/// training and model/file IO.
#[derive(Debug, Error)]
pub enum GfsError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("missing mandatory dataset file {0}")]
    MissingFile(PathBuf),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("node id {id} out of range 1..={max} in {file}")]
    NodeIdOutOfRange { file: String, id: usize, max: usize },

    #[error("ragged attribute rows: node {node} has {got} values, expected {expected}")]
    RaggedAttributes {
        node: usize,
        got: usize,
        expected: usize,
    },

    #[error("graph {graph} has zero nodes")]
    EmptyGraph { graph: usize },

    #[error("self-loop on node {node} (adjacency must have a zero diagonal)")]
    SelfLoop { node: usize },

    #[error("mixed feature dimensions in batch: expected {expected}, graph {graph} has {got}")]
    MixedFeatureDims {
        expected: usize,
        graph: usize,
        got: usize,
    },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("class {class} has {count} samples, fewer than the {splits} requested splits")]
    ClassTooSmall {
        class: usize,
        count: usize,
        splits: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate kernel: raw self-similarity of graph {index} is {value} (must be > 0)")]
    DegenerateKernel { index: usize, value: f64 },

    #[error("cluster count {k} exceeds dataset size {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("prototype index {index} out of range for dataset of {n} graphs")]
    PrototypeOutOfRange { index: usize, n: usize },

    #[error("non-finite gradient on parameter {name}")]
    NonFiniteGradient { name: String },

    #[error("malformed {kind} file: {message}")]
    FileFormat { kind: &'static str, message: String },
}

pub type Result<T> = std::result::Result<T, GfsError>;
