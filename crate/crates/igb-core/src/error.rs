//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by configuration validation, numerical preconditions,
/// file ingestion, and training.
#[derive(Debug, Error)]
pub enum IgbError {
    /// A configuration violates one or more invariants. The message lists
    /// every violated constraint, not just the first.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Array dimensions do not match what an operation requires.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A normalizer denominator is zero with eps = 0. Raised instead of
    /// returning zeros, which would silently corrupt ensemble statistics.
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    /// An input or intermediate value is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Too few samples for the requested statistic.
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    /// The training loss became non-finite. Aborts with the step index
    /// rather than clamping, which would distort dynamics comparisons.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A file could not be parsed; the message carries the offending
    /// line or byte offset.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, IgbError>;
