//! Property tests for the mask structure and the masked softmax kernel.

use cco_core::mask::{build_cco_mask, ChunkLayout, ExtendedLayout, LayerClass, MaskSpec};
use cco_core::tensor::{masked_row_softmax, BoolMatrix, Matrix};
use proptest::prelude::*;

fn mask_spec_strategy() -> impl Strategy<Value = (usize, usize, LayerClass)> {
    (
        0usize..=3,
        0usize..=5,
        prop_oneof![Just(LayerClass::First), Just(LayerClass::Later)],
    )
}

proptest! {
    /// Rows of one chunk's block (frames and slot) share one key set.
    #[test]
    fn block_rows_are_uniform(
        total in 1usize..=64,
        chunk_size in 1usize..=9,
        (lc, n_ctx, layer_class) in mask_spec_strategy(),
    ) {
        let ext = ExtendedLayout::new(ChunkLayout::new(total, chunk_size).unwrap());
        let mask = build_cco_mask(&ext, &MaskSpec { lc, n_ctx, layer_class, cco_enabled: true }).unwrap();
        for b in 0..ext.layout().chunk_count() {
            let rows = ext.block_rows(b);
            let first = mask.row(rows.start).to_vec();
            for r in rows {
                prop_assert_eq!(mask.row(r), &first[..]);
            }
        }
    }

    /// No chunk attends frames or slots of any later chunk.
    #[test]
    fn masks_are_causal(
        total in 1usize..=64,
        chunk_size in 1usize..=9,
        (lc, n_ctx, layer_class) in mask_spec_strategy(),
        cco_enabled in any::<bool>(),
    ) {
        let n_ctx = if cco_enabled { n_ctx } else { 0 };
        let ext = ExtendedLayout::new(ChunkLayout::new(total, chunk_size).unwrap());
        let mask = build_cco_mask(&ext, &MaskSpec { lc, n_ctx, layer_class, cco_enabled }).unwrap();
        let layout = ext.layout();
        for b in 0..layout.chunk_count() {
            let row = if cco_enabled {
                ext.block_rows(b).start
            } else {
                layout.span(b).start
            };
            for c in 0..mask.cols() {
                if mask.get(row, c) {
                    let col_chunk = if cco_enabled {
                        ext.chunk_of_col(c)
                    } else {
                        // Plain layout: map frame index to its chunk.
                        layout
                            .spans()
                            .iter()
                            .position(|s| c >= s.start && c < s.start + s.len)
                            .unwrap()
                    };
                    prop_assert!(col_chunk <= b, "chunk {b} attends chunk {col_chunk}");
                }
            }
        }
    }

    /// Growing n_ctx only ever adds keys, and never changes the first LC+1
    /// chunks.
    #[test]
    fn n_ctx_is_monotone(
        total in 1usize..=64,
        chunk_size in 1usize..=9,
        lc in 0usize..=3,
        n_ctx in 0usize..=4,
    ) {
        let ext = ExtendedLayout::new(ChunkLayout::new(total, chunk_size).unwrap());
        let small = build_cco_mask(&ext, &MaskSpec { lc, n_ctx, layer_class: LayerClass::Later, cco_enabled: true }).unwrap();
        let large = build_cco_mask(&ext, &MaskSpec { lc, n_ctx: n_ctx + 1, layer_class: LayerClass::Later, cco_enabled: true }).unwrap();
        for r in 0..small.rows() {
            for c in 0..small.cols() {
                if small.get(r, c) {
                    prop_assert!(large.get(r, c));
                }
            }
        }
        for b in 0..ext.layout().chunk_count().min(lc + 1) {
            for r in ext.block_rows(b) {
                prop_assert_eq!(small.row(r), large.row(r));
            }
        }
    }

    /// Disabled carry-over with chunk_size >= total degenerates to
    /// full-contextual attention.
    #[test]
    fn oversized_chunk_degenerates_to_full_attention(
        total in 1usize..=48,
        extra in 0usize..=8,
        lc in 0usize..=3,
    ) {
        let ext = ExtendedLayout::new(ChunkLayout::new(total, total + extra).unwrap());
        let mask = build_cco_mask(&ext, &MaskSpec { lc, n_ctx: 0, layer_class: LayerClass::Later, cco_enabled: false }).unwrap();
        prop_assert_eq!(mask.rows(), total);
        for r in 0..total {
            prop_assert_eq!(mask.row_popcount(r), total);
        }
    }

    /// Softmax rows sum to one over allowed entries; masked entries stay
    /// bitwise zero.
    #[test]
    fn softmax_rows_are_normalized(
        rows in 1usize..=8,
        cols in 1usize..=8,
        values in proptest::collection::vec(-50.0f64..50.0, 64),
        mask_bits in proptest::collection::vec(any::<bool>(), 64),
    ) {
        let data: Vec<f64> = values.iter().copied().cycle().take(rows * cols).collect();
        let scores = Matrix::from_vec(rows, cols, data).unwrap();
        let mut mask = BoolMatrix::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                mask.set(r, c, mask_bits[(r * cols + c) % mask_bits.len()]);
            }
            // Keep every row satisfiable.
            mask.set(r, r % cols, true);
        }
        let p = masked_row_softmax(&scores, &mask).unwrap();
        for r in 0..rows {
            let mut sum = 0.0;
            for c in 0..cols {
                if mask.get(r, c) {
                    sum += p.get(r, c);
                    prop_assert!(p.get(r, c) >= 0.0);
                } else {
                    prop_assert_eq!(p.get(r, c).to_bits(), 0.0f64.to_bits());
                }
            }
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    /// Single-precision row sums stay within the coarser tolerance.
    #[test]
    fn softmax_rows_are_normalized_single(
        cols in 1usize..=16,
        values in proptest::collection::vec(-30.0f32..30.0, 16),
    ) {
        let data: Vec<f32> = values.iter().copied().cycle().take(cols).collect();
        let scores = Matrix::from_vec(1, cols, data).unwrap();
        let mask = BoolMatrix::all_true(1, cols);
        let p = masked_row_softmax(&scores, &mask).unwrap();
        let sum: f32 = p.row(0).iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-6);
    }
}
