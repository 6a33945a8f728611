//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not chain for the named tape operation.
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// `backward` was asked to seed from a non-scalar node.
    #[error("backward root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    /// Checked tensor construction rejected NaN/Inf data.
    #[error("non-finite value in tensor data at index {index}")]
    NonFinite { index: usize },

    #[error("tensor shape {shape:?} does not match data length {len}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },

    #[error("malformed PGM: {0}")]
    Pgm(String),

    #[error("map has no drivable cells")]
    NoDrivableCells,

    #[error("pose ({x:.3}, {y:.3}) is not on a drivable cell")]
    PoseNotDrivable { x: f64, y: f64 },

    #[error("trajectory invalid: {0}")]
    Trajectory(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset cache error: {0}")]
    DatasetCache(String),

    #[error("required file missing: {0}")]
    MissingFile(PathBuf),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
