//! Deterministic synthetic inputs and encoder stacks for tests, benches and
//! the CLI.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{EncoderLayerParams, EncoderStack};
use crate::error::Result;
use crate::tensor::{Matrix, Scalar};

/// Shape and seed of a generated encoder stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackSpec {
    pub d_model: usize,
    pub head_count: usize,
    pub layer_count: usize,
    pub d_ff: usize,
    pub seed: u64,
    pub ln_eps: f64,
}

/// Shape and seed of a full synthetic run: frames plus a stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub total_frames: usize,
    pub stack: StackSpec,
}

fn normal(rng: &mut StdRng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_matrix<S: Scalar>(rng: &mut StdRng, rows: usize, cols: usize, scale: f64) -> Matrix<S> {
    let data = (0..rows * cols)
        .map(|_| S::from_f64(normal(rng) * scale))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("size computed from dims")
}

/// Standard-normal frame sequence. Draws happen in `f64` and are rounded to
/// the target precision, so single and double runs of one seed correspond.
pub fn gen_frames<S: Scalar>(total_frames: usize, d_model: usize, seed: u64) -> Matrix<S> {
    let mut rng = StdRng::seed_from_u64(seed);
    random_matrix(&mut rng, total_frames, d_model, 1.0)
}

/// Random stack with projection weights scaled by `1/sqrt(d_model)` and
/// norm parameters jittered around identity.
pub fn gen_stack<S: Scalar>(spec: &StackSpec) -> Result<EncoderStack<S>> {
    // Offset keeps the stack stream independent of the frame stream for the
    // same seed.
    let mut rng = StdRng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let scale = 1.0 / (spec.d_model as f64).sqrt();
    let mut layers = Vec::with_capacity(spec.layer_count);
    for _ in 0..spec.layer_count {
        let norm_vec = |rng: &mut StdRng, center: f64| -> Vec<S> {
            (0..spec.d_model)
                .map(|_| S::from_f64(center + 0.05 * normal(rng)))
                .collect()
        };
        layers.push(EncoderLayerParams {
            w_q: random_matrix(&mut rng, spec.d_model, spec.d_model, scale),
            w_k: random_matrix(&mut rng, spec.d_model, spec.d_model, scale),
            w_v: random_matrix(&mut rng, spec.d_model, spec.d_model, scale),
            w_o: random_matrix(&mut rng, spec.d_model, spec.d_model, scale),
            ffn_w1: random_matrix(&mut rng, spec.d_model, spec.d_ff, scale),
            ffn_w2: random_matrix(
                &mut rng,
                spec.d_ff,
                spec.d_model,
                1.0 / (spec.d_ff as f64).sqrt(),
            ),
            norm1_gain: norm_vec(&mut rng, 1.0),
            norm1_bias: norm_vec(&mut rng, 0.0),
            norm2_gain: norm_vec(&mut rng, 1.0),
            norm2_bias: norm_vec(&mut rng, 0.0),
            head_count: spec.head_count,
        });
    }
    EncoderStack::new(layers, spec.d_model, spec.ln_eps)
}

/// Generate matching frames and stack from one spec.
pub fn gen_synthetic<S: Scalar>(spec: &SyntheticSpec) -> Result<(Matrix<S>, EncoderStack<S>)> {
    let frames = gen_frames(spec.total_frames, spec.stack.d_model, spec.stack.seed);
    let stack = gen_stack(&spec.stack)?;
    Ok((frames, stack))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let a: Matrix<f64> = gen_frames(16, 8, 42);
        let b: Matrix<f64> = gen_frames(16, 8, 42);
        assert!(a.bit_eq(&b));
        let spec = StackSpec {
            d_model: 8,
            head_count: 2,
            layer_count: 2,
            d_ff: 16,
            seed: 42,
            ln_eps: 1e-5,
        };
        let s1 = gen_stack::<f64>(&spec).unwrap();
        let s2 = gen_stack::<f64>(&spec).unwrap();
        assert!(s1.layers()[1].w_o.bit_eq(&s2.layers()[1].w_o));
    }

    #[test]
    fn different_seeds_differ() {
        let a: Matrix<f64> = gen_frames(4, 4, 1);
        let b: Matrix<f64> = gen_frames(4, 4, 2);
        assert!(!a.bit_eq(&b));
    }

    #[test]
    fn generated_shapes_match_spec() {
        let frames: Matrix<f32> = gen_frames(64, 16, 3);
        assert_eq!((frames.rows(), frames.cols()), (64, 16));
        let stack = gen_stack::<f32>(&StackSpec {
            d_model: 16,
            head_count: 4,
            layer_count: 3,
            d_ff: 32,
            seed: 3,
            ln_eps: 1e-5,
        })
        .unwrap();
        assert_eq!(stack.layer_count(), 3);
        assert_eq!(stack.d_ff(), 32);
    }
}
