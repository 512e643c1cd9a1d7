//! Run configuration shared by the offline and streaming paths.

use crate::error::{CcoError, Result};

/// Duration of one down-sampled encoder frame in milliseconds.
pub const FRAME_MS: usize = 40;

/// Element precision of a matrix or a weights file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Precision::Single),
            "double" => Ok(Precision::Double),
            other => Err(CcoError::InvalidArgument {
                context: "precision",
                detail: format!("expected `single` or `double`, got `{other}`"),
            }),
        }
    }
}

/// Convert a frame count to milliseconds (40 ms per frame).
pub fn frames_to_ms(frames: usize) -> usize {
    frames * FRAME_MS
}

/// Convert milliseconds to frames; the value must be a multiple of 40 ms.
pub fn ms_to_frames(ms: usize) -> Result<usize> {
    if ms == 0 || ms % FRAME_MS != 0 {
        return Err(CcoError::InvalidArgument {
            context: "ms_to_frames",
            detail: format!("{ms} ms is not a positive multiple of {FRAME_MS} ms"),
        });
    }
    Ok(ms / FRAME_MS)
}

/// Chunking and carry-over settings for one encoder run or stream session.
///
/// `n_ctx` is an inference-time parameter: it changes which preceding context
/// embeddings later layers attend, without touching the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CcoConfig {
    /// Nominal chunk size in frames.
    pub chunk_size: usize,
    /// Number of preceding chunks whose frames stay attendable.
    pub lc: usize,
    /// Number of preceding context embeddings attendable in layers after the
    /// first.
    pub n_ctx: usize,
    /// When false, no context slots exist and attention reduces to the plain
    /// chunked left-context mask.
    pub cco_enabled: bool,
    /// Model width; must match the encoder stack.
    pub d_model: usize,
}

impl CcoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(CcoError::InvalidArgument {
                context: "CcoConfig",
                detail: "chunk_size must be >= 1".to_string(),
            });
        }
        if self.d_model == 0 {
            return Err(CcoError::InvalidArgument {
                context: "CcoConfig",
                detail: "d_model must be >= 1".to_string(),
            });
        }
        if !self.cco_enabled && self.n_ctx != 0 {
            return Err(CcoError::InvalidArgument {
                context: "CcoConfig",
                detail: "n_ctx must be 0 when carry-over is disabled".to_string(),
            });
        }
        Ok(())
    }
}
