//! Streaming self-attention encoder with chunked masks and context
//! carry-over.
//!
//! The encoder processes a frame sequence in non-overlapping chunks. Each
//! chunk carries one context embedding — initialized as the chunk's frame
//! average — that rides along through the layers and lets later chunks attend
//! a bounded summary of everything before their left-context window instead
//! of the full past. The crate provides:
//!
//! * [`mask`]: chunk layouts and the block-structured attention masks;
//! * [`attention`]: encoder layers and the offline full-sequence forward;
//! * [`streaming`]: an incremental session with bounded per-layer caches
//!   that matches the offline output;
//! * [`grad`]: exact layer gradients with a finite-difference checker;
//! * [`dct`]: the seeded dynamic-chunk-training sampler;
//! * [`accounting`]: key/value memory accounting and latency benchmarking;
//! * [`weights`] / [`synth`]: file formats and deterministic test data.

pub mod accounting;
pub mod attention;
pub mod config;
pub mod dct;
pub mod error;
pub mod grad;
pub mod mask;
pub mod streaming;
pub mod synth;
pub mod tensor;
pub mod weights;

pub use config::{CcoConfig, Precision, FRAME_MS};
pub use error::{CcoError, Result};
pub use tensor::{BoolMatrix, Matrix, Scalar};
