//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty generation")]
    EmptyGeneration,

    #[error("empty sequence")]
    EmptySequence,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid probability vector: {0}")]
    InvalidProbVec(String),

    #[error("mode mass not preserved")]
    ModeMassNotPreserved,

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("unknown scheme: {0}")]
    UnknownScheme(String),

    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("scheme too weak at this configuration: flagged rate {rate:.3} <= 0.9")]
    SchemeTooWeak { rate: f64 },

    #[error("not enough samples: need {need}, got {got}")]
    NotEnoughSamples { need: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
