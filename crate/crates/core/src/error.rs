//! Error types shared across the pipeline.

use thiserror::Error;

/// Unified error type for every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid 4-bit format definition (bit split, empty magnitude table, ...).
    #[error("format error: {0}")]
    Format(String),

    /// Non-finite or otherwise unusable numeric input.
    #[error("input error: {0}")]
    Input(String),

    /// Tensor shape or dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Quantization descriptor inconsistent with the tensor it is applied to.
    #[error("descriptor error: {0}")]
    Descriptor(String),

    /// Channel mask invalid (non-positive entry, length mismatch).
    #[error("mask error: {0}")]
    Mask(String),

    /// Out-of-range parameter (percentile, alpha, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Accumulator identity or channel-count mismatch.
    #[error("accumulator error: {0}")]
    Accumulator(String),

    /// A quantized layer has a channel with no calibration samples.
    #[error("calibration coverage error: layer `{layer}`: {detail}")]
    Coverage { layer: String, detail: String },

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Distribution spec parameters out of range.
    #[error("spec error: {0}")]
    Spec(String),

    /// PTQ state refers to unknown layers or mismatched shapes.
    #[error("state error: {0}")]
    State(String),

    /// Stored checksum does not match the recomputed quantized weight.
    #[error("state integrity error: {0}")]
    Integrity(String),

    /// Serialized file magic or structural layout not recognized.
    #[error("file format error: {0}")]
    FileFormat(String),

    /// Serialized file version not supported by this build.
    #[error("version error: unsupported version {0}")]
    Version(u32),

    /// Serialized file failed its digest check or is truncated.
    #[error("corruption error: {0}")]
    Corruption(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
