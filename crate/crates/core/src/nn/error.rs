use thiserror::Error;

/// Errors raised by tensor ops and graph execution.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("dimension {axis} mismatch: {left} vs {right} ({context})")]
    DimMismatch {
        axis: usize,
        left: usize,
        right: usize,
        context: String,
    },

    #[error("expected rank-{expected} tensor, got shape {shape:?} ({context})")]
    RankMismatch {
        expected: usize,
        shape: Vec<usize>,
        context: String,
    },

    #[error("unsupported stride {stride}: must be 1 or 2")]
    BadStride { stride: usize },

    #[error("batch normalization in train mode needs batch size >= 2, got {batch}")]
    BatchTooSmall { batch: usize },

    #[error("label {label} out of range for {classes} classes (sample {sample})")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        sample: usize,
    },

    #[error("parameter `{0}` missing from parameter set")]
    MissingParam(String),

    #[error("backward called with a forward pass from a different graph ({context})")]
    StaleForward { context: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),
}
