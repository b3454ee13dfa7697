//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Vector with (near-)zero norm where a direction is required.
    #[error("degenerate input: vector norm {norm:e} is below 1e-12, cannot normalize")]
    DegenerateVector { norm: f64 },

    /// Frame parameters whose Gram matrix is not positive semidefinite
    /// or that need more ambient dimensions than provided.
    #[error("infeasible frame: {reason} (num_classes={num_classes}, dim={dim}, off_diagonal={off_diagonal})")]
    FrameInfeasible {
        num_classes: usize,
        dim: usize,
        off_diagonal: f64,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Cosine similarity outside [-1-1e-9, 1+1e-9]; signals an
    /// unnormalized embedding upstream.
    #[error("cosine similarity {value} outside [-1, 1] beyond the 1e-9 clamp band")]
    SimilarityOutOfRange { value: f64 },

    #[error("index {index} out of bounds for pool of size {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("score function is not strictly increasing; threshold is not invertible")]
    NotInvertible,

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("memory capacity must be at least 2, got {0}")]
    CapacityTooSmall(usize),

    #[error("requested {requested} samples from a memory holding {available}")]
    SampleTooLarge { requested: usize, available: usize },

    /// Operation requires the other storage variant (stale vs re-encode).
    #[error("memory variant mismatch: {0}")]
    VariantMismatch(&'static str),

    #[error("class counts do not match the bias spec: {0}")]
    CountMismatch(String),

    /// Loss became NaN/Inf during a run.
    #[error("divergence at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    /// Incremental and recomputed duplicate counts disagree.
    #[error("equivalence check failed: max |delta N| = {0:e} exceeds 1e-6")]
    EquivalenceFailed(f64),
}
