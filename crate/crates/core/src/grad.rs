//! Exact reverse-mode gradients of one encoder layer under a fixed mask,
//! plus the finite-difference checker that validates them.
//!
//! The finite-difference side recomputes the forward pass from scratch for
//! every perturbed element and never touches the analytic path, so the two
//! stay independent.

use crate::attention::{encoder_layer_forward, EncoderLayerParams, LayerTape};
use crate::error::{CcoError, Result};
use crate::tensor::{matmul, BoolMatrix, Matrix, Scalar};

/// Gradients with respect to every tensor of [`EncoderLayerParams`].
#[derive(Debug, Clone)]
pub struct LayerGrads<S: Scalar> {
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
}

fn silu_prime<S: Scalar>(z: S) -> S {
    let sig = S::one() / (S::one() + (-z).exp());
    sig * (S::one() + z * (S::one() - sig))
}

/// Backward pass of layer normalization given the cached normalized rows and
/// per-row inverse deviations. Returns the input gradient and accumulates
/// gain/bias gradients.
fn layer_norm_backward<S: Scalar>(
    upstream: &Matrix<S>,
    nhat: &Matrix<S>,
    inv_std: &[S],
    gain: &[S],
    d_gain: &mut [S],
    d_bias: &mut [S],
) -> Matrix<S> {
    let rows = upstream.rows();
    let cols = upstream.cols();
    let n = S::from_f64(cols as f64);
    let mut dx = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let up = upstream.row(r);
        let nh = nhat.row(r);
        let mut m1 = S::zero();
        let mut m2 = S::zero();
        for j in 0..cols {
            let dnh = up[j] * gain[j];
            m1 = m1 + dnh;
            m2 = m2 + dnh * nh[j];
            d_gain[j] = d_gain[j] + up[j] * nh[j];
            d_bias[j] = d_bias[j] + up[j];
        }
        m1 = m1 / n;
        m2 = m2 / n;
        let dst = dx.row_mut(r);
        for j in 0..cols {
            let dnh = up[j] * gain[j];
            dst[j] = inv_std[r] * (dnh - m1 - nh[j] * m2);
        }
    }
    dx
}

/// Reverse-mode gradients of the layer output with respect to the layer
/// input and all parameters, given the forward tape and an upstream
/// gradient on the output.
pub fn layer_backward<S: Scalar>(
    tape: &LayerTape<S>,
    params: &EncoderLayerParams<S>,
    upstream: &Matrix<S>,
) -> Result<(Matrix<S>, LayerGrads<S>)> {
    let rows = tape.x.rows();
    let d_model = tape.x.cols();
    if upstream.rows() != rows || upstream.cols() != d_model {
        return Err(CcoError::Shape {
            context: "layer_backward",
            detail: format!(
                "upstream {}x{} vs activation {}x{}",
                upstream.rows(),
                upstream.cols(),
                rows,
                d_model
            ),
        });
    }
    let heads = params.head_count;
    let d_head = d_model / heads;
    let scale = S::one() / S::from_f64(d_head as f64).sqrt();

    // Feed-forward branch.
    let d_w2 = matmul(&tape.ffn_act.transpose(), upstream)?;
    let d_act = matmul(upstream, &params.ffn_w2.transpose())?;
    let mut d_pre = Matrix::zeros(rows, params.ffn_w1.cols());
    for r in 0..rows {
        let da = d_act.row(r);
        let pre = tape.ffn_pre.row(r);
        for (dst, (&g, &z)) in d_pre.row_mut(r).iter_mut().zip(da.iter().zip(pre)) {
            *dst = g * silu_prime(z);
        }
    }
    let d_w1 = matmul(&tape.n2.transpose(), &d_pre)?;
    let d_n2 = matmul(&d_pre, &params.ffn_w1.transpose())?;

    let mut norm2_gain = vec![S::zero(); d_model];
    let mut norm2_bias = vec![S::zero(); d_model];
    let d_x2_ln = layer_norm_backward(
        &d_n2,
        &tape.nhat2,
        &tape.inv_std2,
        &params.norm2_gain,
        &mut norm2_gain,
        &mut norm2_bias,
    );
    // y = x2 + ffn(ln2(x2)): both branches feed x2.
    let d_x2 = upstream.add(&d_x2_ln)?;

    // Attention branch.
    let d_w_o = matmul(&tape.concat.transpose(), &d_x2)?;
    let d_concat = matmul(&d_x2, &params.w_o.transpose())?;

    let n_kv = tape.k.rows();
    let mut d_q = Matrix::zeros(rows, d_model);
    let mut d_k = Matrix::zeros(n_kv, d_model);
    let mut d_v = Matrix::zeros(n_kv, d_model);
    for h in 0..heads {
        let off = h * d_head;
        let p = &tape.probs[h];

        // dV += P^T dOut
        for j in 0..n_kv {
            for i in 0..rows {
                let w = p.get(i, j);
                let dout = &d_concat.row(i)[off..off + d_head];
                let dst = &mut d_v.row_mut(j)[off..off + d_head];
                for (o, &g) in dst.iter_mut().zip(dout) {
                    *o = *o + w * g;
                }
            }
        }

        // dP = dOut V^T, then softmax backward row by row.
        let mut d_s = Matrix::zeros(rows, n_kv);
        for i in 0..rows {
            let dout = &d_concat.row(i)[off..off + d_head];
            let mut dp = vec![S::zero(); n_kv];
            let mut dot = S::zero();
            for (j, dp_j) in dp.iter_mut().enumerate() {
                let v_row = &tape.v.row(j)[off..off + d_head];
                let mut acc = S::zero();
                for (&g, &vv) in dout.iter().zip(v_row) {
                    acc = acc + g * vv;
                }
                *dp_j = acc;
                dot = dot + acc * p.get(i, j);
            }
            let dst = d_s.row_mut(i);
            for (j, &dp_j) in dp.iter().enumerate() {
                dst[j] = p.get(i, j) * (dp_j - dot);
            }
        }

        // S = scale * Q K^T
        for i in 0..rows {
            let ds = d_s.row(i);
            let dst = &mut d_q.row_mut(i)[off..off + d_head];
            for (j, &ds_j) in ds.iter().enumerate() {
                let k_row = &tape.k.row(j)[off..off + d_head];
                let w = scale * ds_j;
                for (o, &kk) in dst.iter_mut().zip(k_row) {
                    *o = *o + w * kk;
                }
            }
        }
        for j in 0..n_kv {
            let dst = &mut d_k.row_mut(j)[off..off + d_head];
            for i in 0..rows {
                let w = scale * d_s.get(i, j);
                let q_row = &tape.q.row(i)[off..off + d_head];
                for (o, &qq) in dst.iter_mut().zip(q_row) {
                    *o = *o + w * qq;
                }
            }
        }
    }

    let d_w_q = matmul(&tape.n1.transpose(), &d_q)?;
    let d_w_k = matmul(&tape.n1.transpose(), &d_k)?;
    let d_w_v = matmul(&tape.n1.transpose(), &d_v)?;

    let d_n1 = matmul(&d_q, &params.w_q.transpose())?
        .add(&matmul(&d_k, &params.w_k.transpose())?)?
        .add(&matmul(&d_v, &params.w_v.transpose())?)?;

    let mut norm1_gain = vec![S::zero(); d_model];
    let mut norm1_bias = vec![S::zero(); d_model];
    let d_x_ln = layer_norm_backward(
        &d_n1,
        &tape.nhat1,
        &tape.inv_std1,
        &params.norm1_gain,
        &mut norm1_gain,
        &mut norm1_bias,
    );
    let d_x = d_x2.add(&d_x_ln)?;

    Ok((
        d_x,
        LayerGrads {
            w_q: d_w_q,
            w_k: d_w_k,
            w_v: d_w_v,
            w_o: d_w_o,
            ffn_w1: d_w1,
            ffn_w2: d_w2,
            norm1_gain,
            norm1_bias,
            norm2_gain,
            norm2_bias,
        },
    ))
}

/// Scalar probe: sum of `upstream (.) layer_output`.
fn probe_loss(
    x: &Matrix<f64>,
    params: &EncoderLayerParams<f64>,
    eps: f64,
    mask: &BoolMatrix,
    upstream: &Matrix<f64>,
) -> Result<f64> {
    let y = encoder_layer_forward(x, params, eps, mask)?;
    Ok(y.data()
        .iter()
        .zip(upstream.data())
        .map(|(&a, &b)| a * b)
        .sum())
}

/// Worst relative discrepancy per tensor.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

/// Denominator floor for relative error; below this scale both gradients are
/// within finite-difference noise and compared against the floor instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compare analytic gradients against central finite differences of step `h`
/// for every parameter tensor and the layer input.
pub fn gradient_check(
    x: &Matrix<f64>,
    params: &EncoderLayerParams<f64>,
    eps: f64,
    mask: &BoolMatrix,
    upstream: &Matrix<f64>,
    h: f64,
) -> Result<GradCheckReport> {
    let (_, tape) = crate::attention::encoder_layer_forward_cached(x, params, eps, mask)?;
    let (d_x, grads) = layer_backward(&tape, params, upstream)?;

    let mut per_tensor = Vec::new();

    let mut check_matrix =
        |name: &str,
         analytic: &Matrix<f64>,
         read: &dyn Fn(&EncoderLayerParams<f64>, &Matrix<f64>) -> Matrix<f64>,
         write: &dyn Fn(&mut EncoderLayerParams<f64>, &mut Matrix<f64>, usize, usize, f64)|
         -> Result<f64> {
            let base = read(params, x);
            let mut worst = 0.0f64;
            for r in 0..base.rows() {
                for c in 0..base.cols() {
                    let orig = base.get(r, c);
                    let mut p_hi = params.clone();
                    let mut x_hi = x.clone();
                    write(&mut p_hi, &mut x_hi, r, c, orig + h);
                    let hi = probe_loss(&x_hi, &p_hi, eps, mask, upstream)?;
                    let mut p_lo = params.clone();
                    let mut x_lo = x.clone();
                    write(&mut p_lo, &mut x_lo, r, c, orig - h);
                    let lo = probe_loss(&x_lo, &p_lo, eps, mask, upstream)?;
                    let numeric = (hi - lo) / (2.0 * h);
                    worst = worst.max(rel_err(analytic.get(r, c), numeric));
                }
            }
            per_tensor.push((name.to_string(), worst));
            Ok(worst)
        };

    check_matrix("x", &d_x, &|_, x| x.clone(), &|_, x, r, c, v| {
        x.set(r, c, v)
    })?;
    check_matrix(
        "w_q",
        &grads.w_q,
        &|p, _| p.w_q.clone(),
        &|p, _, r, c, v| p.w_q.set(r, c, v),
    )?;
    check_matrix(
        "w_k",
        &grads.w_k,
        &|p, _| p.w_k.clone(),
        &|p, _, r, c, v| p.w_k.set(r, c, v),
    )?;
    check_matrix(
        "w_v",
        &grads.w_v,
        &|p, _| p.w_v.clone(),
        &|p, _, r, c, v| p.w_v.set(r, c, v),
    )?;
    check_matrix(
        "w_o",
        &grads.w_o,
        &|p, _| p.w_o.clone(),
        &|p, _, r, c, v| p.w_o.set(r, c, v),
    )?;
    check_matrix(
        "ffn_w1",
        &grads.ffn_w1,
        &|p, _| p.ffn_w1.clone(),
        &|p, _, r, c, v| p.ffn_w1.set(r, c, v),
    )?;
    check_matrix(
        "ffn_w2",
        &grads.ffn_w2,
        &|p, _| p.ffn_w2.clone(),
        &|p, _, r, c, v| p.ffn_w2.set(r, c, v),
    )?;

    let mut check_vector = |name: &str,
                            analytic: &[f64],
                            write: &dyn Fn(&mut EncoderLayerParams<f64>, usize, f64)|
     -> Result<f64> {
        let mut worst = 0.0f64;
        for j in 0..analytic.len() {
            let orig = match name {
                "norm1_gain" => params.norm1_gain[j],
                "norm1_bias" => params.norm1_bias[j],
                "norm2_gain" => params.norm2_gain[j],
                _ => params.norm2_bias[j],
            };
            let mut p_hi = params.clone();
            write(&mut p_hi, j, orig + h);
            let hi = probe_loss(x, &p_hi, eps, mask, upstream)?;
            let mut p_lo = params.clone();
            write(&mut p_lo, j, orig - h);
            let lo = probe_loss(x, &p_lo, eps, mask, upstream)?;
            let numeric = (hi - lo) / (2.0 * h);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
        per_tensor.push((name.to_string(), worst));
        Ok(worst)
    };

    check_vector("norm1_gain", &grads.norm1_gain, &|p, j, v| {
        p.norm1_gain[j] = v
    })?;
    check_vector("norm1_bias", &grads.norm1_bias, &|p, j, v| {
        p.norm1_bias[j] = v
    })?;
    check_vector("norm2_gain", &grads.norm2_gain, &|p, j, v| {
        p.norm2_gain[j] = v
    })?;
    check_vector("norm2_bias", &grads.norm2_bias, &|p, j, v| {
        p.norm2_bias[j] = v
    })?;

    let max_rel_err = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_tensor,
        max_rel_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::encoder_layer_forward_cached;
    use crate::mask::{build_cco_mask, ChunkLayout, ExtendedLayout, LayerClass, MaskSpec};
    use crate::synth::{gen_frames, gen_stack, StackSpec};

    fn small_setup() -> (Matrix<f64>, EncoderLayerParams<f64>, BoolMatrix) {
        let layout = ChunkLayout::new(8, 4).unwrap();
        let ext = ExtendedLayout::new(layout);
        let mask = build_cco_mask(
            &ext,
            &MaskSpec {
                lc: 1,
                n_ctx: 1,
                layer_class: LayerClass::Later,
                cco_enabled: true,
            },
        )
        .unwrap();
        let x = gen_frames::<f64>(ext.extended_len(), 8, 100);
        let params = gen_stack::<f64>(&StackSpec {
            d_model: 8,
            head_count: 2,
            layer_count: 1,
            d_ff: 16,
            seed: 101,
            ln_eps: 1e-5,
        })
        .unwrap()
        .layers()[0]
            .clone();
        (x, params, mask)
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (x, params, mask) = small_setup();
        let (_, tape) = encoder_layer_forward_cached(&x, &params, 1e-5, &mask).unwrap();
        let zero = Matrix::zeros(x.rows(), x.cols());
        let (dx, grads) = layer_backward(&tape, &params, &zero).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(grads.w_q.data().iter().all(|&v| v == 0.0));
        assert!(grads.ffn_w2.data().iter().all(|&v| v == 0.0));
        assert!(grads.norm1_gain.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_does_not_flow_to_unattended_rows() {
        let (x, params, mask) = small_setup();
        let (_, tape) = encoder_layer_forward_cached(&x, &params, 1e-5, &mask).unwrap();
        // Upstream signal only on chunk 1's block (rows 0..5); chunk 2's rows
        // (5..10) are never among chunk 1's keys, so nothing reaches them.
        let mut upstream = Matrix::zeros(x.rows(), x.cols());
        for r in 0..5 {
            for c in 0..x.cols() {
                upstream.set(r, c, 1.0);
            }
        }
        let (dx, _) = layer_backward(&tape, &params, &upstream).unwrap();
        for r in 5..10 {
            for c in 0..x.cols() {
                assert_eq!(dx.get(r, c), 0.0, "row {r} col {c}");
            }
        }
        assert!(dx.slice_rows(0, 5).data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let (x, params, mask) = small_setup();
        let upstream = gen_frames::<f64>(x.rows(), x.cols(), 555);
        let report = gradient_check(&x, &params, 1e-5, &mask, &upstream, 1e-5).unwrap();
        for (name, err) in &report.per_tensor {
            assert!(*err <= 1e-4, "{name}: relative error {err}");
        }
    }
}
