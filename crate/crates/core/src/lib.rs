//! Desk-scale W4A4 post-training quantization pipeline.
//!
//! The pipeline has three stages: calibration runs a full-precision toy
//! transformer over a synthetic batch stream and collects per-channel
//! absolute-activation statistics; PTQ builds per-input-channel balancing
//! masks from those statistics (max or high-percentile), quantizes the
//! balanced weights under a signed 4-bit floating-point code set, and
//! records everything in a compact binary state; quantized inference
//! restores that state against the original weights and simulates 4-bit
//! weights and activations in the selected linear layers.
//!
//! Modules:
//!
//! - [`codec`]: the parameterizable 4-bit float format and the
//!   quantize-dequantize operator.
//! - [`tensor`]: dense row-major `f64` tensors and the few ops the
//!   pipeline needs.
//! - [`calib`]: per-layer, per-channel sample stores with max and
//!   percentile queries.
//! - [`balance`]: channel-mask construction and the equivalence transform.
//! - [`model`]: the toy transformer description and forward pass.
//! - [`engine`]: layer selection, calibration, PTQ, state application,
//!   quantized inference, evaluation.
//! - [`state`]: bit-exact serialization of PTQ states and calibration
//!   checkpoints.
//! - [`synth`]: seeded generators for weights and heavy-tailed activations.

pub mod balance;
pub mod calib;
pub mod codec;
pub mod digest;
pub mod engine;
pub mod error;
pub mod model;
pub mod state;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
