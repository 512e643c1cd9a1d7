//! Multi-head self-attention over the extended chunk layout, encoder layer
//! parameters, and the offline full-sequence forward pass.
//!
//! Context slots enter layer 1 as their chunk's frame average and from then
//! on evolve like any other row: attention (under the block mask), residual,
//! feed-forward. The offline path materializes the full mask and serves as
//! the reference the streaming engine is checked against.
//!
//! Layer recipe: pre-norm, attention, residual, pre-norm, two-matrix
//! feed-forward with SiLU, residual.

use crate::config::CcoConfig;
use crate::error::{CcoError, Result};
use crate::mask::{build_cco_mask, ChunkLayout, ExtendedLayout, LayerClass, MaskSpec};
use crate::tensor::{layer_norm, masked_row_softmax, matmul, BoolMatrix, Matrix, Scalar};

/// Weights of one encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams<S: Scalar> {
    pub w_q: Matrix<S>,
    pub w_k: Matrix<S>,
    pub w_v: Matrix<S>,
    pub w_o: Matrix<S>,
    pub ffn_w1: Matrix<S>,
    pub ffn_w2: Matrix<S>,
    pub norm1_gain: Vec<S>,
    pub norm1_bias: Vec<S>,
    pub norm2_gain: Vec<S>,
    pub norm2_bias: Vec<S>,
    pub head_count: usize,
}

impl<S: Scalar> EncoderLayerParams<S> {
    pub fn d_ff(&self) -> usize {
        self.ffn_w1.cols()
    }

    pub fn validate(&self, d_model: usize) -> Result<()> {
        let square = [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
        ];
        for (name, m) in square {
            if m.rows() != d_model || m.cols() != d_model {
                return Err(CcoError::Shape {
                    context: "EncoderLayerParams",
                    detail: format!(
                        "{name} is {}x{}, expected {d_model}x{d_model}",
                        m.rows(),
                        m.cols()
                    ),
                });
            }
            m.ensure_finite("EncoderLayerParams")?;
        }
        let d_ff = self.ffn_w1.cols();
        if self.ffn_w1.rows() != d_model
            || self.ffn_w2.rows() != d_ff
            || self.ffn_w2.cols() != d_model
        {
            return Err(CcoError::Shape {
                context: "EncoderLayerParams",
                detail: "feed-forward weights are inconsistent with d_model".to_string(),
            });
        }
        self.ffn_w1.ensure_finite("EncoderLayerParams")?;
        self.ffn_w2.ensure_finite("EncoderLayerParams")?;
        for (name, v) in [
            ("norm1_gain", &self.norm1_gain),
            ("norm1_bias", &self.norm1_bias),
            ("norm2_gain", &self.norm2_gain),
            ("norm2_bias", &self.norm2_bias),
        ] {
            if v.len() != d_model {
                return Err(CcoError::Shape {
                    context: "EncoderLayerParams",
                    detail: format!("{name} has length {}, expected {d_model}", v.len()),
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(CcoError::NonFinite {
                    context: "EncoderLayerParams",
                });
            }
        }
        if self.head_count == 0 || d_model % self.head_count != 0 {
            return Err(CcoError::InvalidArgument {
                context: "EncoderLayerParams",
                detail: format!(
                    "head_count {} must divide d_model {d_model}",
                    self.head_count
                ),
            });
        }
        Ok(())
    }
}

/// Immutable stack of encoder layers sharing one width and head count.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack<S: Scalar> {
    layers: Vec<EncoderLayerParams<S>>,
    d_model: usize,
    ln_eps: f64,
}

impl<S: Scalar> EncoderStack<S> {
    pub fn new(layers: Vec<EncoderLayerParams<S>>, d_model: usize, ln_eps: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(CcoError::InvalidArgument {
                context: "EncoderStack",
                detail: "at least one layer required".to_string(),
            });
        }
        if !(ln_eps > 0.0) {
            return Err(CcoError::InvalidArgument {
                context: "EncoderStack",
                detail: "ln_eps must be positive".to_string(),
            });
        }
        let head_count = layers[0].head_count;
        let d_ff = layers[0].d_ff();
        for layer in &layers {
            layer.validate(d_model)?;
            if layer.head_count != head_count || layer.d_ff() != d_ff {
                return Err(CcoError::InvalidArgument {
                    context: "EncoderStack",
                    detail: "all layers must share head_count and d_ff".to_string(),
                });
            }
        }
        Ok(EncoderStack {
            layers,
            d_model,
            ln_eps,
        })
    }

    pub fn layers(&self) -> &[EncoderLayerParams<S>] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn head_count(&self) -> usize {
        self.layers[0].head_count
    }

    pub fn d_ff(&self) -> usize {
        self.layers[0].d_ff()
    }

    pub fn ln_eps(&self) -> f64 {
        self.ln_eps
    }
}

/// Activation over the extended layout (frames plus one slot per chunk).
#[derive(Debug, Clone)]
pub struct ExtendedActivation<S: Scalar> {
    pub values: Matrix<S>,
    pub layout: ExtendedLayout,
    pub layer_index: usize,
}

/// Column mean of rows `[start, end)` of `m`.
pub(crate) fn rows_mean<S: Scalar>(m: &Matrix<S>, start: usize, end: usize) -> Vec<S> {
    debug_assert!(start < end && end <= m.rows());
    let mut sum = vec![S::zero(); m.cols()];
    for r in start..end {
        for (acc, &v) in sum.iter_mut().zip(m.row(r)) {
            *acc = *acc + v;
        }
    }
    let n = S::from_f64((end - start) as f64);
    for acc in &mut sum {
        *acc = *acc / n;
    }
    sum
}

/// Interleave frames with context slots, each slot initialized to the mean
/// of its chunk's frame rows.
pub fn init_context_slots<S: Scalar>(
    frames: &Matrix<S>,
    layout: &ChunkLayout,
) -> Result<ExtendedActivation<S>> {
    if frames.rows() != layout.total_frames() {
        return Err(CcoError::Shape {
            context: "init_context_slots",
            detail: format!(
                "{} frame rows vs layout over {}",
                frames.rows(),
                layout.total_frames()
            ),
        });
    }
    let ext = ExtendedLayout::new(layout.clone());
    let mut values = Matrix::zeros(ext.extended_len(), frames.cols());
    for b in 0..layout.chunk_count() {
        let span = layout.span(b);
        for f in 0..span.len {
            let dst = ext.frame_col(b, f);
            values
                .row_mut(dst)
                .copy_from_slice(frames.row(span.start + f));
        }
        let mean = rows_mean(frames, span.start, span.start + span.len);
        values.row_mut(ext.slot_col(b)).copy_from_slice(&mean);
    }
    Ok(ExtendedActivation {
        values,
        layout: ext,
        layer_index: 0,
    })
}

/// Forward cache of one encoder layer, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct LayerTape<S: Scalar> {
    pub(crate) x: Matrix<S>,
    pub(crate) nhat1: Matrix<S>,
    pub(crate) inv_std1: Vec<S>,
    pub(crate) n1: Matrix<S>,
    pub(crate) q: Matrix<S>,
    pub(crate) k: Matrix<S>,
    pub(crate) v: Matrix<S>,
    pub(crate) probs: Vec<Matrix<S>>,
    pub(crate) concat: Matrix<S>,
    pub(crate) nhat2: Matrix<S>,
    pub(crate) inv_std2: Vec<S>,
    pub(crate) n2: Matrix<S>,
    pub(crate) ffn_pre: Matrix<S>,
    pub(crate) ffn_act: Matrix<S>,
}

pub(crate) struct LnParts<S: Scalar> {
    pub out: Matrix<S>,
    pub nhat: Matrix<S>,
    pub inv_std: Vec<S>,
}

/// Layer norm that also returns the normalized rows and per-row 1/sigma.
/// Produces bit-identical output to [`crate::tensor::layer_norm`].
pub(crate) fn layer_norm_parts<S: Scalar>(
    x: &Matrix<S>,
    gain: &[S],
    bias: &[S],
    eps: S,
) -> Result<LnParts<S>> {
    let out = layer_norm(x, gain, bias, eps)?;
    let n = S::from_f64(x.cols() as f64);
    let mut nhat = Matrix::zeros(x.rows(), x.cols());
    let mut inv_stds = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mut sum = S::zero();
        for &v in row {
            sum = sum + v;
        }
        let mean = sum / n;
        let mut var_sum = S::zero();
        for &v in row {
            let d = v - mean;
            var_sum = var_sum + d * d;
        }
        let inv_std = S::one() / (var_sum / n + eps).sqrt();
        let dst = nhat.row_mut(r);
        for (j, &v) in row.iter().enumerate() {
            dst[j] = (v - mean) * inv_std;
        }
        inv_stds.push(inv_std);
    }
    Ok(LnParts {
        out,
        nhat,
        inv_std: inv_stds,
    })
}

struct AttnParts<S: Scalar> {
    q: Matrix<S>,
    k: Matrix<S>,
    v: Matrix<S>,
    probs: Vec<Matrix<S>>,
    concat: Matrix<S>,
    out: Matrix<S>,
}

/// Multi-head attention of `q_src` rows over `kv_src` rows, masked per head
/// by `mask` (query row x key column). Sources are used as-is; callers apply
/// any normalization beforehand.
fn attention_parts<S: Scalar>(
    q_src: &Matrix<S>,
    kv_src: &Matrix<S>,
    params: &EncoderLayerParams<S>,
    mask: &BoolMatrix,
) -> Result<AttnParts<S>> {
    let d_model = params.w_q.rows();
    if q_src.cols() != d_model || kv_src.cols() != d_model {
        return Err(CcoError::Shape {
            context: "attention",
            detail: format!(
                "source widths {}/{} vs d_model {d_model}",
                q_src.cols(),
                kv_src.cols()
            ),
        });
    }
    if mask.rows() != q_src.rows() || mask.cols() != kv_src.rows() {
        return Err(CcoError::Shape {
            context: "attention",
            detail: format!(
                "mask {}x{} vs {} queries, {} keys",
                mask.rows(),
                mask.cols(),
                q_src.rows(),
                kv_src.rows()
            ),
        });
    }
    let heads = params.head_count;
    let d_head = d_model / heads;
    let scale = S::one() / S::from_f64(d_head as f64).sqrt();

    let q = matmul(q_src, &params.w_q)?;
    let k = matmul(kv_src, &params.w_k)?;
    let v = matmul(kv_src, &params.w_v)?;

    let n_q = q_src.rows();
    let n_kv = kv_src.rows();
    let mut concat = Matrix::zeros(n_q, d_model);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let off = h * d_head;
        let mut scores = Matrix::zeros(n_q, n_kv);
        for i in 0..n_q {
            let q_row = &q.row(i)[off..off + d_head];
            let s_row = scores.row_mut(i);
            for (j, s) in s_row.iter_mut().enumerate() {
                let k_row = &k.row(j)[off..off + d_head];
                let mut acc = S::zero();
                for (&qv, &kv) in q_row.iter().zip(k_row) {
                    acc = acc + qv * kv;
                }
                *s = acc * scale;
            }
        }
        let p = masked_row_softmax(&scores, mask)?;
        for i in 0..n_q {
            let p_row = p.row(i);
            // Mask zeros are exact, so including them leaves the sums
            // untouched bit for bit.
            for j in 0..n_kv {
                let w = p_row[j];
                let v_row = &v.row(j)[off..off + d_head];
                let dst = &mut concat.row_mut(i)[off..off + d_head];
                for (o, &vv) in dst.iter_mut().zip(v_row) {
                    *o = *o + w * vv;
                }
            }
        }
        probs.push(p);
    }
    let out = matmul(&concat, &params.w_o)?;
    Ok(AttnParts {
        q,
        k,
        v,
        probs,
        concat,
        out,
    })
}

/// Masked multi-head self-attention of `x` against itself: projections,
/// per-head masked softmax, head concatenation, output projection. No
/// residual or normalization.
pub fn mhsa_forward<S: Scalar>(
    x: &Matrix<S>,
    params: &EncoderLayerParams<S>,
    mask: &BoolMatrix,
) -> Result<Matrix<S>> {
    attention_parts(x, x, params, mask).map(|p| p.out)
}

/// Attention with distinct query and key/value sources; used by the
/// streaming engine where keys are gathered from bounded caches.
pub(crate) fn attention_output<S: Scalar>(
    q_src: &Matrix<S>,
    kv_src: &Matrix<S>,
    params: &EncoderLayerParams<S>,
    mask: &BoolMatrix,
) -> Result<Matrix<S>> {
    attention_parts(q_src, kv_src, params, mask).map(|p| p.out)
}

pub(crate) fn silu<S: Scalar>(z: S) -> S {
    z / (S::one() + (-z).exp())
}

pub(crate) fn ffn_forward<S: Scalar>(
    x: &Matrix<S>,
    params: &EncoderLayerParams<S>,
) -> Result<Matrix<S>> {
    let pre = matmul(x, &params.ffn_w1)?;
    let act = pre.map(silu);
    matmul(&act, &params.ffn_w2)
}

/// One encoder layer with the forward cache retained.
pub fn encoder_layer_forward_cached<S: Scalar>(
    x: &Matrix<S>,
    params: &EncoderLayerParams<S>,
    eps: S,
    mask: &BoolMatrix,
) -> Result<(Matrix<S>, LayerTape<S>)> {
    let ln1 = layer_norm_parts(x, &params.norm1_gain, &params.norm1_bias, eps)?;
    let attn = attention_parts(&ln1.out, &ln1.out, params, mask)?;
    let x2 = x.add(&attn.out)?;
    let ln2 = layer_norm_parts(&x2, &params.norm2_gain, &params.norm2_bias, eps)?;
    let ffn_pre = matmul(&ln2.out, &params.ffn_w1)?;
    let ffn_act = ffn_pre.map(silu);
    let ffn_out = matmul(&ffn_act, &params.ffn_w2)?;
    let y = x2.add(&ffn_out)?;
    let tape = LayerTape {
        x: x.clone(),
        nhat1: ln1.nhat,
        inv_std1: ln1.inv_std,
        n1: ln1.out,
        q: attn.q,
        k: attn.k,
        v: attn.v,
        probs: attn.probs,
        concat: attn.concat,
        nhat2: ln2.nhat,
        inv_std2: ln2.inv_std,
        n2: ln2.out,
        ffn_pre,
        ffn_act,
    };
    Ok((y, tape))
}

/// One encoder layer: pre-norm attention and pre-norm feed-forward, each
/// with a residual connection.
pub fn encoder_layer_forward<S: Scalar>(
    x: &Matrix<S>,
    params: &EncoderLayerParams<S>,
    eps: S,
    mask: &BoolMatrix,
) -> Result<Matrix<S>> {
    let ln1 = layer_norm(x, &params.norm1_gain, &params.norm1_bias, eps)?;
    let attn = attention_parts(&ln1, &ln1, params, mask)?;
    let x2 = x.add(&attn.out)?;
    let ln2 = layer_norm(&x2, &params.norm2_gain, &params.norm2_bias, eps)?;
    let ffn_out = ffn_forward(&ln2, params)?;
    x2.add(&ffn_out)
}

/// Full offline forward pass; returns the frame rows of the final layer
/// (context slots stripped).
///
/// With carry-over enabled, layer 1 runs under the first-layer mask on the
/// slot-initialized extended sequence and all later layers under the
/// later-layer mask with `cfg.n_ctx`. Disabled, every layer runs the plain
/// chunked left-context mask over the frames alone.
pub fn encoder_forward_offline<S: Scalar>(
    frames: &Matrix<S>,
    stack: &EncoderStack<S>,
    cfg: &CcoConfig,
) -> Result<Matrix<S>> {
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
    if frames.cols() != cfg.d_model {
        return Err(CcoError::Shape {
            context: "encoder_forward_offline",
            detail: format!("{} input columns vs d_model {}", frames.cols(), cfg.d_model),
        });
    }
    let layout = ChunkLayout::new(frames.rows(), cfg.chunk_size)?;
    let eps = S::from_f64(stack.ln_eps());

    if !cfg.cco_enabled {
        let ext = ExtendedLayout::new(layout);
        let mask = build_cco_mask(
            &ext,
            &MaskSpec {
                lc: cfg.lc,
                n_ctx: 0,
                layer_class: LayerClass::Later,
                cco_enabled: false,
            },
        )?;
        let mut x = frames.clone();
        for layer in stack.layers() {
            x = encoder_layer_forward(&x, layer, eps, &mask)?;
        }
        return Ok(x);
    }

    let act = init_context_slots(frames, &layout)?;
    let ext = act.layout;
    let first_mask = build_cco_mask(
        &ext,
        &MaskSpec {
            lc: cfg.lc,
            n_ctx: cfg.n_ctx,
            layer_class: LayerClass::First,
            cco_enabled: true,
        },
    )?;
    let later_mask = build_cco_mask(
        &ext,
        &MaskSpec {
            lc: cfg.lc,
            n_ctx: cfg.n_ctx,
            layer_class: LayerClass::Later,
            cco_enabled: true,
        },
    )?;
    let mut x = act.values;
    for (i, layer) in stack.layers().iter().enumerate() {
        let mask = if i == 0 { &first_mask } else { &later_mask };
        x = encoder_layer_forward(&x, layer, eps, mask)?;
    }

    let layout = ext.layout();
    let mut out = Matrix::zeros(layout.total_frames(), cfg.d_model);
    for b in 0..layout.chunk_count() {
        let span = layout.span(b);
        for f in 0..span.len {
            out.row_mut(span.start + f)
                .copy_from_slice(x.row(ext.frame_col(b, f)));
        }
    }
    Ok(out)
}
