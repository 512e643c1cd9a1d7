//! Key/value memory accounting and a per-chunk latency micro-benchmark.
//!
//! The accounting side contrasts the bounded carry-over key sets against a
//! baseline that streams with full past context, whose key count grows with
//! the chunk index. The benchmark side times `push_frames` per chunk on a
//! live session; acceptance works on overhead ratios between configurations,
//! not absolute times.

use std::time::Instant;

use crate::attention::EncoderStack;
use crate::config::CcoConfig;
use crate::error::{CcoError, Result};
use crate::mask::{kv_count, ChunkLayout, LayerClass, MaskSpec};
use crate::streaming::StreamSession;
use crate::synth::gen_frames;
use crate::tensor::Scalar;

/// Key/value counts for one chunk under one layer class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryRow {
    pub chunk: usize,
    pub layer_class: LayerClass,
    /// Keys attended with carry-over at the configured LC and N_ctx.
    pub cco_kv: usize,
    /// Keys attended by a non-contextual model streaming with full past
    /// context.
    pub baseline_kv: usize,
}

/// Per-chunk key counts plus later-layer totals for one configuration.
#[derive(Debug, Clone)]
pub struct MemoryReport {
    pub chunk_size: usize,
    pub lc: usize,
    pub n_ctx: usize,
    pub rows: Vec<MemoryRow>,
    pub cco_total: usize,
    pub baseline_total: usize,
    pub ratio: f64,
}

/// Exact key counts for `chunk_count` full chunks of `chunk_size` frames.
pub fn memory_report(
    chunk_size: usize,
    lc: usize,
    n_ctx: usize,
    chunk_count: usize,
) -> Result<MemoryReport> {
    if chunk_count == 0 {
        return Err(CcoError::InvalidArgument {
            context: "memory_report",
            detail: "chunk_count must be >= 1".to_string(),
        });
    }
    let layout = ChunkLayout::new(chunk_size * chunk_count, chunk_size)?;
    let mut rows = Vec::with_capacity(2 * chunk_count);
    let mut cco_total = 0;
    let mut baseline_total = 0;
    for chunk in 0..chunk_count {
        let baseline_kv = kv_count(
            &MaskSpec {
                lc: chunk,
                n_ctx: 0,
                layer_class: LayerClass::Later,
                cco_enabled: false,
            },
            chunk,
            &layout,
        );
        for layer_class in [LayerClass::First, LayerClass::Later] {
            let cco_kv = kv_count(
                &MaskSpec {
                    lc,
                    n_ctx,
                    layer_class,
                    cco_enabled: true,
                },
                chunk,
                &layout,
            );
            if layer_class == LayerClass::Later {
                cco_total += cco_kv;
                baseline_total += baseline_kv;
            }
            rows.push(MemoryRow {
                chunk,
                layer_class,
                cco_kv,
                baseline_kv,
            });
        }
    }
    Ok(MemoryReport {
        chunk_size,
        lc,
        n_ctx,
        rows,
        cco_total,
        baseline_total,
        ratio: cco_total as f64 / baseline_total as f64,
    })
}

/// Wall-clock per-chunk timings of a streaming session.
#[derive(Debug, Clone)]
pub struct LatencyReport {
    pub per_chunk_ms: Vec<f64>,
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub samples: usize,
    /// Digest of all emitted output values; identical configs must produce
    /// identical digests no matter how the timings came out.
    pub output_checksum: u64,
}

/// Nearest-rank percentile of an unsorted sample set.
fn percentile_nearest_rank(samples: &[f64], p: f64) -> f64 {
    debug_assert!(!samples.is_empty());
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn fnv1a(acc: u64, bytes: &[u8]) -> u64 {
    let mut h = acc;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stream `stream_chunks` seeded random chunks through a fresh session
/// `repetitions` times (after one unrecorded warm-up pass) and time each
/// chunk's `push_frames` call.
pub fn bench_stream<S: Scalar>(
    stack: &EncoderStack<S>,
    cfg: &CcoConfig,
    stream_chunks: usize,
    repetitions: usize,
    seed: u64,
) -> Result<LatencyReport> {
    if stream_chunks == 0 || repetitions == 0 {
        return Err(CcoError::InvalidArgument {
            context: "bench_stream",
            detail: "stream_chunks and repetitions must be >= 1".to_string(),
        });
    }
    let chunks: Vec<_> = (0..stream_chunks)
        .map(|i| gen_frames::<S>(cfg.chunk_size, cfg.d_model, seed.wrapping_add(i as u64)))
        .collect();

    let run = |record: Option<&mut Vec<f64>>| -> Result<u64> {
        let mut checksum = 0xcbf2_9ce4_8422_2325u64;
        let mut session = StreamSession::open(stack, *cfg)?;
        match record {
            Some(samples) => {
                for chunk in &chunks {
                    let start = Instant::now();
                    let outs = session.push_frames(chunk)?;
                    samples.push(start.elapsed().as_secs_f64() * 1e3);
                    for out in outs {
                        for &v in out.values.data() {
                            checksum = fnv1a(checksum, &v.to_f64().to_le_bytes());
                        }
                    }
                }
            }
            None => {
                for chunk in &chunks {
                    let outs = session.push_frames(chunk)?;
                    for out in outs {
                        for &v in out.values.data() {
                            checksum = fnv1a(checksum, &v.to_f64().to_le_bytes());
                        }
                    }
                }
            }
        }
        Ok(checksum)
    };

    let warm_checksum = run(None)?;
    let mut per_chunk_ms = Vec::with_capacity(stream_chunks * repetitions);
    let mut output_checksum = 0;
    for _ in 0..repetitions {
        output_checksum = run(Some(&mut per_chunk_ms))?;
        debug_assert_eq!(output_checksum, warm_checksum);
    }

    let mean_ms = per_chunk_ms.iter().sum::<f64>() / per_chunk_ms.len() as f64;
    let p99_ms = percentile_nearest_rank(&per_chunk_ms, 99.0);
    Ok(LatencyReport {
        samples: per_chunk_ms.len(),
        per_chunk_ms,
        mean_ms,
        p99_ms,
        output_checksum,
    })
}
