// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module, plus the process exit codes the CLI
//! maps each variant to.

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("k = {k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },

    #[error("rank deficient: requested k = {k} but effective rank is {effective_rank}")]
    RankDeficient { k: usize, effective_rank: usize },

    #[error("unknown token: {0}")]
    UnknownToken(String),

    #[error("zero-norm weight row for token {0}")]
    ZeroNormRow(String),

    #[error("unknown category: {0}")]
    UnknownCategory(String),

    #[error("no vocabulary head available; editing requires one")]
    MissingHead,

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable name used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::NonFinite { .. } => "non_finite",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Invalid(_) => "invalid_input",
            Error::KOutOfRange { .. } => "k_out_of_range",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::UnknownToken(_) => "unknown_token",
            Error::ZeroNormRow(_) => "zero_norm_row",
            Error::UnknownCategory(_) => "unknown_category",
            Error::MissingHead => "missing_head",
            Error::InsufficientSamples(_) => "insufficient_samples",
            Error::Degenerate(_) => "degenerate",
            Error::Config(_) => "config",
        }
    }

    /// Process exit code. 1 is reserved for panics, 2 for argument errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Format { .. } => 4,
            Error::NonFinite { .. } => 5,
            Error::DimensionMismatch { .. } => 6,
            Error::Invalid(_) => 7,
            Error::KOutOfRange { .. } => 8,
            Error::RankDeficient { .. } => 9,
            Error::UnknownToken(_) => 10,
            Error::ZeroNormRow(_) => 11,
            Error::UnknownCategory(_) => 12,
            Error::MissingHead => 13,
            Error::InsufficientSamples(_) => 14,
            Error::Degenerate(_) => 15,
            Error::Config(_) => 16,
        }
    }
}
