//! Chunk layouts and the block-structured attention masks for context
//! carry-over.
//!
//! A sequence of `T` frames is split into non-overlapping chunks of nominal
//! size `C` (the last chunk may be short). With carry-over enabled, the mask
//! is defined over an *extended* sequence that appends one context slot after
//! each chunk's frames: `[chunk 1 frames, ctx 1, chunk 2 frames, ctx 2, ...]`,
//! giving `T + B` positions for `B` chunks.
//!
//! Every query row of chunk `b` — its frames and its own context slot — shares
//! one allowed-column set:
//!
//! * first layer: frames of chunks `b-LC..=b` plus chunk `b`'s own slot;
//! * later layers: additionally the context slots of chunks
//!   `b-LC-N_ctx..=b-LC-1`, i.e. the embeddings summarizing what came before
//!   the attendable left-context window.
//!
//! Chunks near the start of the stream clip these ranges to the chunks that
//! exist. With carry-over disabled the mask is the plain `T x T` chunked
//! left-context mask and no slots exist.
//!
//! Chunks are 0-indexed in code; user-facing output numbers them from 1.

use crate::error::{CcoError, Result};
use crate::tensor::BoolMatrix;

/// Half-open span of frame indices covered by one chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

/// Partition of `total_frames` into non-overlapping chunks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkLayout {
    total_frames: usize,
    chunk_size: usize,
    spans: Vec<Span>,
}

impl ChunkLayout {
    /// Split `total_frames` into `ceil(total_frames / chunk_size)` chunks.
    pub fn new(total_frames: usize, chunk_size: usize) -> Result<Self> {
        if total_frames == 0 || chunk_size == 0 {
            return Err(CcoError::InvalidArgument {
                context: "ChunkLayout::new",
                detail: format!(
                    "total_frames ({total_frames}) and chunk_size ({chunk_size}) must be >= 1"
                ),
            });
        }
        let mut spans = Vec::new();
        let mut start = 0;
        while start < total_frames {
            let len = chunk_size.min(total_frames - start);
            spans.push(Span { start, len });
            start += len;
        }
        Ok(ChunkLayout {
            total_frames,
            chunk_size,
            spans,
        })
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn chunk_count(&self) -> usize {
        self.spans.len()
    }

    pub fn span(&self, chunk: usize) -> Span {
        self.spans[chunk]
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }
}

/// Chunk layout plus the interleaved context-slot positions.
///
/// Extended position of chunk `b`'s frame `f` is `span(b).start + b + f`; its
/// context slot sits directly after the chunk's frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedLayout {
    layout: ChunkLayout,
}

impl ExtendedLayout {
    pub fn new(layout: ChunkLayout) -> Self {
        ExtendedLayout { layout }
    }

    pub fn layout(&self) -> &ChunkLayout {
        &self.layout
    }

    pub fn extended_len(&self) -> usize {
        self.layout.total_frames() + self.layout.chunk_count()
    }

    /// Extended column of frame `offset` within chunk `chunk`.
    pub fn frame_col(&self, chunk: usize, offset: usize) -> usize {
        let span = self.layout.span(chunk);
        debug_assert!(offset < span.len);
        span.start + chunk + offset
    }

    /// Extended column of chunk `chunk`'s context slot.
    pub fn slot_col(&self, chunk: usize) -> usize {
        let span = self.layout.span(chunk);
        span.start + span.len + chunk
    }

    pub fn is_slot(&self, col: usize) -> bool {
        let chunk = self.chunk_of_col(col);
        col == self.slot_col(chunk)
    }

    /// Chunk owning an extended position (its frames or its slot).
    pub fn chunk_of_col(&self, col: usize) -> usize {
        debug_assert!(col < self.extended_len());
        // Chunk b occupies positions [span.start + b, span.start + span.len + b].
        let mut chunk = 0;
        while self.slot_col(chunk) < col {
            chunk += 1;
        }
        chunk
    }

    /// Extended row range of chunk `chunk`'s block (frames plus slot).
    pub fn block_rows(&self, chunk: usize) -> std::ops::Range<usize> {
        let span = self.layout.span(chunk);
        span.start + chunk..span.start + span.len + chunk + 1
    }
}

/// Which mask variant a layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerClass {
    /// First encoder layer: no preceding context slots in the key set.
    First,
    /// Any later layer: up to `n_ctx` preceding context slots join the keys.
    Later,
}

impl LayerClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerClass::First => "first",
            LayerClass::Later => "later",
        }
    }
}

/// Parameters of one mask: left context, preceding-context count, layer class
/// and whether carry-over is active at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSpec {
    pub lc: usize,
    pub n_ctx: usize,
    pub layer_class: LayerClass,
    pub cco_enabled: bool,
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.cco_enabled && self.n_ctx != 0 {
            return Err(CcoError::InvalidArgument {
                context: "MaskSpec",
                detail: "n_ctx must be 0 when carry-over is disabled".to_string(),
            });
        }
        Ok(())
    }
}

/// First chunk whose frames chunk `b` may attend.
pub(crate) fn frame_window_start(chunk: usize, lc: usize) -> usize {
    chunk.saturating_sub(lc)
}

/// Preceding context slots attendable by chunk `b` in later layers:
/// chunks `b-lc-n_ctx..=b-lc-1`, clipped to those that exist.
pub(crate) fn ctx_window(chunk: usize, lc: usize, n_ctx: usize) -> std::ops::Range<usize> {
    let end = chunk as isize - lc as isize;
    let start = end - n_ctx as isize;
    let end = end.max(0) as usize;
    let start = start.max(0) as usize;
    start..end
}

/// Build the attention mask for one layer class over the extended layout
/// (or over the plain frame sequence when carry-over is disabled).
pub fn build_cco_mask(ext: &ExtendedLayout, spec: &MaskSpec) -> Result<BoolMatrix> {
    spec.validate()?;
    let layout = ext.layout();
    let chunks = layout.chunk_count();

    if !spec.cco_enabled {
        let t = layout.total_frames();
        let mut mask = BoolMatrix::new(t, t);
        for b in 0..chunks {
            let span = layout.span(b);
            let first = frame_window_start(b, spec.lc);
            for r in span.start..span.start + span.len {
                for k in first..=b {
                    let ks = layout.span(k);
                    for c in ks.start..ks.start + ks.len {
                        mask.set(r, c, true);
                    }
                }
            }
        }
        return Ok(mask);
    }

    let n = ext.extended_len();
    let mut mask = BoolMatrix::new(n, n);
    for b in 0..chunks {
        let mut allowed = Vec::new();
        if spec.layer_class == LayerClass::Later {
            for k in ctx_window(b, spec.lc, spec.n_ctx) {
                allowed.push(ext.slot_col(k));
            }
        }
        for k in frame_window_start(b, spec.lc)..=b {
            let span = layout.span(k);
            for f in 0..span.len {
                allowed.push(ext.frame_col(k, f));
            }
        }
        allowed.push(ext.slot_col(b));

        for r in ext.block_rows(b) {
            for &c in &allowed {
                mask.set(r, c, true);
            }
        }
    }
    Ok(mask)
}

/// Number of key/value positions chunk `chunk` attends under `spec`.
///
/// Computed arithmetically from the chunk spans; tests cross-check it against
/// the popcount of the corresponding mask rows.
pub fn kv_count(spec: &MaskSpec, chunk: usize, layout: &ChunkLayout) -> usize {
    assert!(chunk < layout.chunk_count());
    let mut frames = 0;
    for k in frame_window_start(chunk, spec.lc)..=chunk {
        frames += layout.span(k).len;
    }
    if !spec.cco_enabled {
        return frames;
    }
    let preceding_ctx = if spec.layer_class == LayerClass::Later {
        ctx_window(chunk, spec.lc, spec.n_ctx).len()
    } else {
        0
    };
    frames + preceding_ctx + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ext(total_frames: usize, chunk_size: usize) -> ExtendedLayout {
        ExtendedLayout::new(ChunkLayout::new(total_frames, chunk_size).unwrap())
    }

    fn spec(lc: usize, n_ctx: usize, layer_class: LayerClass) -> MaskSpec {
        MaskSpec {
            lc,
            n_ctx,
            layer_class,
            cco_enabled: true,
        }
    }

    fn allowed_cols(mask: &BoolMatrix, row: usize) -> Vec<usize> {
        (0..mask.cols()).filter(|&c| mask.get(row, c)).collect()
    }

    #[test]
    fn layout_even_partition() {
        let layout = ChunkLayout::new(16, 4).unwrap();
        assert_eq!(layout.chunk_count(), 4);
        assert!(layout.spans().iter().all(|s| s.len == 4));
    }

    #[test]
    fn layout_short_last_chunk() {
        let layout = ChunkLayout::new(10, 4).unwrap();
        let lens: Vec<usize> = layout.spans().iter().map(|s| s.len).collect();
        assert_eq!(lens, vec![4, 4, 2]);
    }

    #[test]
    fn layout_single_short_chunk() {
        let layout = ChunkLayout::new(3, 8).unwrap();
        assert_eq!(layout.chunk_count(), 1);
        assert_eq!(layout.span(0), Span { start: 0, len: 3 });
    }

    #[test]
    fn layout_rejects_zero_arguments() {
        assert!(ChunkLayout::new(0, 4).is_err());
        assert!(ChunkLayout::new(4, 0).is_err());
    }

    #[test]
    fn extended_positions_interleave_slots() {
        let ext = ext(16, 4);
        assert_eq!(ext.extended_len(), 20);
        assert_eq!(ext.frame_col(0, 0), 0);
        assert_eq!(ext.slot_col(0), 4);
        assert_eq!(ext.frame_col(1, 0), 5);
        assert_eq!(ext.slot_col(1), 9);
        assert_eq!(ext.slot_col(3), 19);
        assert!(ext.is_slot(9));
        assert!(!ext.is_slot(10));
        assert_eq!(ext.chunk_of_col(9), 1);
        assert_eq!(ext.chunk_of_col(10), 2);
        assert_eq!(ext.block_rows(2), 10..15);
    }

    /// Four chunks of four frames, LC=1, one preceding context embedding:
    /// chunk 4's rows attend exactly {ctx 2} + frames of chunks 3-4 + {ctx 4}.
    #[test]
    fn later_mask_four_chunks_lc1_nctx1() {
        let ext = ext(16, 4);
        let mask = build_cco_mask(&ext, &spec(1, 1, LayerClass::Later)).unwrap();
        let expected: Vec<usize> = std::iter::once(9)
            .chain(10..14)
            .chain(15..19)
            .chain(std::iter::once(19))
            .collect();
        for r in ext.block_rows(3) {
            assert_eq!(allowed_cols(&mask, r), expected);
        }
        assert_eq!(mask.row_popcount(15), 10);
    }

    #[test]
    fn later_mask_nctx2_adds_one_more_slot() {
        let ext = ext(16, 4);
        let mask = build_cco_mask(&ext, &spec(1, 2, LayerClass::Later)).unwrap();
        let cols = allowed_cols(&mask, 15);
        assert_eq!(cols.len(), 11);
        assert!(cols.contains(&4), "ctx slot of chunk 1 must join the keys");
        assert!(cols.contains(&9));
    }

    #[test]
    fn early_chunks_have_no_preceding_slots() {
        let ext = ext(16, 4);
        let mask = build_cco_mask(&ext, &spec(1, 1, LayerClass::Later)).unwrap();
        // Chunks 1 and 2 have no predecessor beyond the left-context window.
        assert_eq!(allowed_cols(&mask, 0), vec![0, 1, 2, 3, 4]);
        let chunk2: Vec<usize> = (0..4).chain(5..10).collect();
        assert_eq!(allowed_cols(&mask, 5), chunk2);
    }

    #[test]
    fn first_layer_mask_has_no_foreign_slots() {
        let ext = ext(16, 4);
        let mask = build_cco_mask(&ext, &spec(1, 1, LayerClass::First)).unwrap();
        let expected: Vec<usize> = (5..9).chain(10..14).chain(std::iter::once(14)).collect();
        for r in ext.block_rows(2) {
            assert_eq!(allowed_cols(&mask, r), expected);
        }
        assert_eq!(mask.row_popcount(10), 9);
    }

    #[test]
    fn disabled_carry_over_gives_plain_chunked_mask() {
        let ext = ext(8, 4);
        let m = build_cco_mask(
            &ext,
            &MaskSpec {
                lc: 0,
                n_ctx: 0,
                layer_class: LayerClass::Later,
                cco_enabled: false,
            },
        )
        .unwrap();
        assert_eq!(m.rows(), 8);
        assert_eq!(m.row_popcount(0), 4);
        assert_eq!(m.row_popcount(7), 4);
        assert!(!m.get(0, 4));
        assert!(m.get(4, 5));
    }

    #[test]
    fn full_chunk_covers_whole_sequence() {
        let ext = ext(6, 8);
        let m = build_cco_mask(
            &ext,
            &MaskSpec {
                lc: 3,
                n_ctx: 0,
                layer_class: LayerClass::Later,
                cco_enabled: false,
            },
        )
        .unwrap();
        for r in 0..6 {
            assert_eq!(m.row_popcount(r), 6);
        }
    }

    #[test]
    fn kv_count_examples() {
        let layout = ChunkLayout::new(16, 4).unwrap();
        assert_eq!(kv_count(&spec(1, 1, LayerClass::Later), 3, &layout), 10);
        assert_eq!(kv_count(&spec(1, 0, LayerClass::First), 0, &layout), 5);

        let layout = ChunkLayout::new(32, 4).unwrap();
        let baseline = MaskSpec {
            lc: 7,
            n_ctx: 0,
            layer_class: LayerClass::Later,
            cco_enabled: false,
        };
        assert_eq!(kv_count(&baseline, 7, &layout), 32);
    }

    #[test]
    fn kv_count_matches_mask_popcount_on_grid() {
        for chunk_size in [2usize, 4, 8] {
            for chunks in 1usize..=8 {
                let total = chunk_size * chunks;
                let layout = ChunkLayout::new(total, chunk_size).unwrap();
                let ext = ExtendedLayout::new(layout.clone());
                for lc in [0usize, 1, 2] {
                    for n_ctx in [0usize, 1, 2, 4] {
                        for layer_class in [LayerClass::First, LayerClass::Later] {
                            let spec = spec(lc, n_ctx, layer_class);
                            let mask = build_cco_mask(&ext, &spec).unwrap();
                            for b in 0..chunks {
                                let row = ext.block_rows(b).start;
                                assert_eq!(
                                    kv_count(&spec, b, &layout),
                                    mask.row_popcount(row),
                                    "C={chunk_size} B={chunks} lc={lc} n_ctx={n_ctx} b={b}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn kv_count_handles_short_last_chunk() {
        let layout = ChunkLayout::new(10, 4).unwrap();
        let ext = ExtendedLayout::new(layout.clone());
        let s = spec(1, 1, LayerClass::Later);
        let mask = build_cco_mask(&ext, &s).unwrap();
        for b in 0..layout.chunk_count() {
            let row = ext.block_rows(b).start;
            assert_eq!(kv_count(&s, b, &layout), mask.row_popcount(row));
        }
        // Last chunk: ctx1 + frames of chunks 2 (4) and 3 (2) + own slot.
        assert_eq!(kv_count(&s, 2, &layout), 8);
    }
}
