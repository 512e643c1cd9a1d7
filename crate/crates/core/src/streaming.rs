//! Incremental streaming inference with bounded per-layer caches.
//!
//! A session consumes frames in arbitrary-sized pushes, cuts them into
//! non-overlapping chunks with no look-ahead, and runs each chunk through the
//! stack as soon as it completes. Per layer it keeps the last `LC` chunk
//! outputs and the newest `N_ctx + LC + 1` context embeddings; that is every
//! key any future chunk can still attend, so the cache never grows with the
//! stream.
//!
//! Keys for a chunk are gathered from the caches in the same order the
//! offline mask exposes them — preceding context embeddings (oldest first),
//! then left-context frames, then the chunk itself and its own embedding —
//! which keeps the streaming output numerically aligned with
//! [`crate::attention::encoder_forward_offline`]. The offline path is the
//! oracle; this module is the product path whose per-chunk cost is
//! O(kv_count).

use std::collections::VecDeque;

use crate::attention::{attention_output, ffn_forward, rows_mean, EncoderStack};
use crate::config::CcoConfig;
use crate::error::{CcoError, Result};
use crate::mask::ctx_window;
use crate::tensor::{layer_norm, BoolMatrix, Matrix, Scalar};

/// Output rows of one completed chunk.
#[derive(Debug, Clone)]
pub struct ChunkOutput<S: Scalar> {
    pub chunk_index: usize,
    pub values: Matrix<S>,
}

#[derive(Debug, Clone)]
struct CtxEntry<S: Scalar> {
    chunk: usize,
    values: Vec<S>,
}

/// Bounded per-layer cache: recent chunk outputs plus recent context
/// embeddings, indexed by chunk number.
#[derive(Debug, Clone)]
struct LayerCache<S: Scalar> {
    recent_chunks: VecDeque<Matrix<S>>,
    ctx_history: VecDeque<CtxEntry<S>>,
}

impl<S: Scalar> LayerCache<S> {
    fn new() -> Self {
        LayerCache {
            recent_chunks: VecDeque::new(),
            ctx_history: VecDeque::new(),
        }
    }

    fn push(&mut self, frames: Matrix<S>, ctx: Option<CtxEntry<S>>, lc: usize, ctx_cap: usize) {
        if lc > 0 {
            self.recent_chunks.push_back(frames);
            while self.recent_chunks.len() > lc {
                self.recent_chunks.pop_front();
            }
        }
        if let Some(entry) = ctx {
            if ctx_cap > 0 {
                self.ctx_history.push_back(entry);
                while self.ctx_history.len() > ctx_cap {
                    self.ctx_history.pop_front();
                }
            }
        }
    }
}

/// Cache occupancy of one layer, for bounded-memory assertions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheStats {
    pub chunk_entries: usize,
    pub ctx_entries: usize,
}

/// Single-writer incremental session over a shared immutable stack.
///
/// Distinct sessions on one stack are independent and may run in parallel;
/// one session must be driven from one thread at a time.
#[derive(Debug)]
pub struct StreamSession<'a, S: Scalar> {
    stack: &'a EncoderStack<S>,
    cfg: CcoConfig,
    caches: Vec<LayerCache<S>>,
    carry: Vec<S>,
    chunks_processed: usize,
    closed: bool,
}

impl<'a, S: Scalar> StreamSession<'a, S> {
    /// Open a session with empty caches.
    pub fn open(stack: &'a EncoderStack<S>, cfg: CcoConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.d_model != stack.d_model() {
            return Err(CcoError::ConfigMismatch {
                detail: format!(
                    "config d_model {} vs stack d_model {}",
                    cfg.d_model,
                    stack.d_model()
                ),
            });
        }
        Ok(StreamSession {
            stack,
            cfg,
            caches: (0..stack.layer_count())
                .map(|_| LayerCache::new())
                .collect(),
            carry: Vec::new(),
            chunks_processed: 0,
            closed: false,
        })
    }

    pub fn chunks_processed(&self) -> usize {
        self.chunks_processed
    }

    /// Frames buffered but not yet part of a complete chunk.
    pub fn carried_frames(&self) -> usize {
        self.carry.len() / self.cfg.d_model
    }

    pub fn cache_stats(&self) -> Vec<CacheStats> {
        self.caches
            .iter()
            .map(|c| CacheStats {
                chunk_entries: c.recent_chunks.len(),
                ctx_entries: c.ctx_history.len(),
            })
            .collect()
    }

    /// Feed frames; emits one output per chunk completed by this push.
    pub fn push_frames(&mut self, frames: &Matrix<S>) -> Result<Vec<ChunkOutput<S>>> {
        if self.closed {
            return Err(CcoError::SessionClosed);
        }
        if frames.cols() != self.cfg.d_model {
            return Err(CcoError::Shape {
                context: "push_frames",
                detail: format!("{} columns vs d_model {}", frames.cols(), self.cfg.d_model),
            });
        }
        self.carry.extend_from_slice(frames.data());
        let d = self.cfg.d_model;
        let chunk_elems = self.cfg.chunk_size * d;
        let mut outputs = Vec::new();
        while self.carry.len() >= chunk_elems {
            let rest = self.carry.split_off(chunk_elems);
            let chunk_data = std::mem::replace(&mut self.carry, rest);
            let chunk = Matrix::from_vec(self.cfg.chunk_size, d, chunk_data)?;
            outputs.push(self.process_chunk(chunk)?);
        }
        Ok(outputs)
    }

    /// Process any buffered partial chunk as a short final chunk and close
    /// the session.
    pub fn flush(&mut self) -> Result<Option<ChunkOutput<S>>> {
        if self.closed {
            return Err(CcoError::SessionClosed);
        }
        self.closed = true;
        if self.carry.is_empty() {
            return Ok(None);
        }
        let d = self.cfg.d_model;
        let rows = self.carry.len() / d;
        let chunk = Matrix::from_vec(rows, d, std::mem::take(&mut self.carry))?;
        Ok(Some(self.process_chunk(chunk)?))
    }

    fn process_chunk(&mut self, chunk_frames: Matrix<S>) -> Result<ChunkOutput<S>> {
        let b = self.chunks_processed;
        let cfg = self.cfg;
        let d = cfg.d_model;
        let eps = S::from_f64(self.stack.ln_eps());
        let ctx_cap = cfg.lc + cfg.n_ctx + 1;

        let mut act = if cfg.cco_enabled {
            let mean = rows_mean(&chunk_frames, 0, chunk_frames.rows());
            let slot = Matrix::from_vec(1, d, mean)?;
            chunk_frames.vstack(&slot)?
        } else {
            chunk_frames
        };

        for (l, layer) in self.stack.layers().iter().enumerate() {
            let cache = &self.caches[l];

            let mut kv_data: Vec<S> = Vec::new();
            let mut n_kv = 0;
            if cfg.cco_enabled && l > 0 && cfg.n_ctx > 0 {
                let want = ctx_window(b, cfg.lc, cfg.n_ctx);
                let mut found = 0;
                for entry in &cache.ctx_history {
                    if want.contains(&entry.chunk) {
                        kv_data.extend_from_slice(&entry.values);
                        n_kv += 1;
                        found += 1;
                    }
                }
                debug_assert_eq!(found, want.len(), "ctx cache must cover the window");
            }
            for past in &cache.recent_chunks {
                kv_data.extend_from_slice(past.data());
                n_kv += past.rows();
            }
            kv_data.extend_from_slice(act.data());
            n_kv += act.rows();
            let kv = Matrix::from_vec(n_kv, d, kv_data)?;

            let q_n = layer_norm(&act, &layer.norm1_gain, &layer.norm1_bias, eps)?;
            let kv_n = layer_norm(&kv, &layer.norm1_gain, &layer.norm1_bias, eps)?;
            let all = BoolMatrix::all_true(act.rows(), n_kv);
            let attn = attention_output(&q_n, &kv_n, layer, &all)?;
            let x2 = act.add(&attn)?;
            let ln2 = layer_norm(&x2, &layer.norm2_gain, &layer.norm2_bias, eps)?;
            let ffn = ffn_forward(&ln2, layer)?;
            let next = x2.add(&ffn)?;

            let (level_frames, level_ctx) = if cfg.cco_enabled {
                let rows = act.rows();
                let frames = act.slice_rows(0, rows - 1);
                let ctx = CtxEntry {
                    chunk: b,
                    values: act.row(rows - 1).to_vec(),
                };
                (frames, Some(ctx))
            } else {
                (act, None)
            };
            self.caches[l].push(
                level_frames,
                level_ctx,
                cfg.lc,
                if cfg.cco_enabled { ctx_cap } else { 0 },
            );

            act = next;
        }

        self.chunks_processed += 1;
        let values = if cfg.cco_enabled {
            act.slice_rows(0, act.rows() - 1)
        } else {
            act
        };
        Ok(ChunkOutput {
            chunk_index: b,
            values,
        })
    }
}

/// Elementwise discrepancy between the offline and streaming paths on the
/// same input.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub max_abs_diff: f64,
    pub per_chunk_diffs: Vec<f64>,
}

/// Run the offline reference and a streaming session over identical frames
/// and report their elementwise discrepancy.
pub fn compare_offline<S: Scalar>(
    frames: &Matrix<S>,
    stack: &EncoderStack<S>,
    cfg: &CcoConfig,
) -> Result<EquivalenceReport> {
    let offline = crate::attention::encoder_forward_offline(frames, stack, cfg)?;
    let mut session = StreamSession::open(stack, *cfg)?;
    let mut outputs = session.push_frames(frames)?;
    if let Some(tail) = session.flush()? {
        outputs.push(tail);
    }

    let mut per_chunk_diffs = Vec::with_capacity(outputs.len());
    let mut max_abs_diff = 0.0f64;
    let mut row = 0;
    for out in &outputs {
        let offline_rows = offline.slice_rows(row, row + out.values.rows());
        let diff = out.values.max_abs_diff(&offline_rows);
        per_chunk_diffs.push(diff);
        max_abs_diff = max_abs_diff.max(diff);
        row += out.values.rows();
    }
    if row != frames.rows() {
        return Err(CcoError::InvalidArgument {
            context: "compare_offline",
            detail: format!(
                "stream emitted {row} rows for {} input frames",
                frames.rows()
            ),
        });
    }
    Ok(EquivalenceReport {
        max_abs_diff,
        per_chunk_diffs,
    })
}
