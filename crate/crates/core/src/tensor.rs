//! Dense row-major matrices in single or double precision, plus the three
//! kernels everything else is built from: matrix product, masked row softmax
//! and layer normalization.
//!
//! All operations are pure; inputs are never mutated. Sequence lengths stay
//! in the low thousands here, so there is no blocking, no SIMD and no
//! sparsity — just predictable loops whose summation order is identical no
//! matter which code path assembled the operands.

use std::fmt;

use num_traits::Float;

use crate::config::Precision;
use crate::error::{CcoError, Result};

/// Matrix element type: `f32` or `f64`.
pub trait Scalar: Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static {
    const PRECISION: Precision;
    /// Encoded size in bytes (little-endian).
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;
    const BYTES: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        f64::from(self)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;
    const BYTES: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CcoError::Shape {
                context: "Matrix::from_vec",
                detail: format!(
                    "{rows}x{cols} needs {} elements, got {}",
                    rows * cols,
                    data.len()
                ),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(CcoError::Shape {
                    context: "Matrix::from_rows",
                    detail: format!("row {i} has {} elements, expected {cols}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Stack the rows of `self` on top of the rows of `other`.
    pub fn vstack(&self, other: &Matrix<S>) -> Result<Matrix<S>> {
        if self.cols != other.cols {
            return Err(CcoError::Shape {
                context: "Matrix::vstack",
                detail: format!("{} vs {} columns", self.cols, other.cols),
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Copy of the row range `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix<S> {
        assert!(start <= end && end <= self.rows);
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn transpose(&self) -> Matrix<S> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix<S>) -> Result<Matrix<S>> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(CcoError::Shape {
                context: "Matrix::add",
                detail: format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Matrix<S> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Largest elementwise |a - b|, evaluated in double precision.
    pub fn max_abs_diff(&self, other: &Matrix<S>) -> f64 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// True when every element is bit-identical to `other`.
    pub fn bit_eq(&self, other: &Matrix<S>) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| a.to_f64().to_bits() == b.to_f64().to_bits())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(CcoError::NonFinite { context })
        }
    }
}

/// Boolean mask with the same row-major layout as [`Matrix`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        BoolMatrix {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn all_true(rows: usize, cols: usize) -> Self {
        BoolMatrix {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.bits[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_popcount(&self, r: usize) -> usize {
        self.row(r).iter().filter(|&&b| b).count()
    }
}

/// Standard row-major matrix product.
pub fn matmul<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Result<Matrix<S>> {
    if a.cols != b.rows {
        return Err(CcoError::Shape {
            context: "matmul",
            detail: format!("{}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = b.row(k);
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bkj;
            }
        }
    }
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// Row softmax restricted to the allowed entries of `mask`.
///
/// Masked entries of the result are exactly zero and never read from
/// `scores`; the max subtraction runs over allowed entries only, so garbage
/// in masked positions cannot perturb the output. A row with no allowed
/// entry is a contract violation, never a silent uniform row.
pub fn masked_row_softmax<S: Scalar>(scores: &Matrix<S>, mask: &BoolMatrix) -> Result<Matrix<S>> {
    if scores.rows != mask.rows() || scores.cols != mask.cols() {
        return Err(CcoError::Shape {
            context: "masked_row_softmax",
            detail: format!(
                "scores {}x{} vs mask {}x{}",
                scores.rows,
                scores.cols,
                mask.rows(),
                mask.cols()
            ),
        });
    }
    let mut out = Matrix::zeros(scores.rows, scores.cols);
    for r in 0..scores.rows {
        let s_row = scores.row(r);
        let m_row = mask.row(r);

        let mut max: Option<S> = None;
        for (s, &allowed) in s_row.iter().zip(m_row) {
            if allowed {
                max = Some(match max {
                    Some(m) if m >= *s => m,
                    _ => *s,
                });
            }
        }
        let max = max.ok_or(CcoError::FullyMaskedRow { row: r })?;

        let out_row = out.row_mut(r);
        let mut sum = S::zero();
        for ((o, s), &allowed) in out_row.iter_mut().zip(s_row).zip(m_row) {
            if allowed {
                let e = (*s - max).exp();
                *o = e;
                sum = sum + e;
            }
        }
        for (o, &allowed) in out_row.iter_mut().zip(m_row) {
            if allowed {
                *o = *o / sum;
            }
        }
    }
    Ok(out)
}

/// Per-row layer normalization with learned gain and bias.
pub fn layer_norm<S: Scalar>(x: &Matrix<S>, gain: &[S], bias: &[S], eps: S) -> Result<Matrix<S>> {
    if gain.len() != x.cols || bias.len() != x.cols {
        return Err(CcoError::Shape {
            context: "layer_norm",
            detail: format!(
                "gain/bias lengths {}/{} vs {} columns",
                gain.len(),
                bias.len(),
                x.cols
            ),
        });
    }
    if eps <= S::zero() {
        return Err(CcoError::InvalidArgument {
            context: "layer_norm",
            detail: "eps must be positive".to_string(),
        });
    }
    let n = S::from_f64(x.cols as f64);
    let mut out = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
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
        let out_row = out.row_mut(r);
        for (j, &v) in row.iter().enumerate() {
            out_row[j] = (v - mean) * inv_std * gain[j] + bias[j];
        }
    }
    out.ensure_finite("layer_norm")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Independent triple-loop product used as the matmul oracle.
    fn matmul_naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize) -> Matrix<f64> {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_identity_is_exact() {
        let mut rng = StdRng::seed_from_u64(11);
        let m = random_matrix(&mut rng, 5, 3);
        let id = Matrix::identity(5);
        let prod = matmul(&id, &m).unwrap();
        assert!(prod.bit_eq(&m));
    }

    #[test]
    fn matmul_hand_example() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.get(0, 0), 3.0);
        assert_eq!(c.get(1, 0), 7.0);
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 8, 8);
        let b = random_matrix(&mut rng, 8, 8);
        let fast = matmul(&a, &b).unwrap();
        let slow = matmul_naive(&a, &b);
        assert!(fast.max_abs_diff(&slow) <= 1e-12);
    }

    #[test]
    fn matmul_rejects_shape_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(CcoError::Shape { .. })));
    }

    #[test]
    fn matmul_flags_overflow() {
        let a = Matrix::from_vec(1, 1, vec![f64::MAX]).unwrap();
        let b = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        assert!(matches!(matmul(&a, &b), Err(CcoError::NonFinite { .. })));
    }

    #[test]
    fn softmax_equal_scores_is_uniform() {
        let scores = Matrix::from_vec(1, 4, vec![3.0; 4]).unwrap();
        let mask = BoolMatrix::all_true(1, 4);
        let p = masked_row_softmax(&scores, &mask).unwrap();
        for c in 0..4 {
            assert!((p.get(0, c) - 0.25).abs() <= 1e-15);
        }
    }

    #[test]
    fn softmax_single_allowed_entry_is_one() {
        let scores = Matrix::from_vec(1, 3, vec![-5.0, 100.0, 2.0]).unwrap();
        let mut mask = BoolMatrix::new(1, 3);
        mask.set(0, 1, true);
        let p = masked_row_softmax(&scores, &mask).unwrap();
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(p.get(0, 1), 1.0);
        assert_eq!(p.get(0, 2), 0.0);
    }

    #[test]
    fn softmax_large_scores_do_not_overflow() {
        let scores = Matrix::from_vec(1, 2, vec![1000.0, 1001.0]).unwrap();
        let mask = BoolMatrix::all_true(1, 2);
        let p = masked_row_softmax(&scores, &mask).unwrap();
        let e = std::f64::consts::E;
        assert!((p.get(0, 0) - 1.0 / (1.0 + e)).abs() <= 1e-12);
        assert!((p.get(0, 1) - e / (1.0 + e)).abs() <= 1e-12);
    }

    #[test]
    fn softmax_masked_entries_are_bitwise_zero() {
        let mut rng = StdRng::seed_from_u64(3);
        let scores = random_matrix(&mut rng, 6, 6);
        let mut mask = BoolMatrix::new(6, 6);
        for r in 0..6 {
            for c in 0..=r {
                mask.set(r, c, true);
            }
        }
        let p = masked_row_softmax(&scores, &mask).unwrap();
        for r in 0..6 {
            let mut sum = 0.0;
            for c in 0..6 {
                if mask.get(r, c) {
                    sum += p.get(r, c);
                } else {
                    assert_eq!(p.get(r, c).to_bits(), 0.0f64.to_bits());
                }
            }
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_fully_masked_row() {
        let scores = Matrix::<f64>::zeros(2, 2);
        let mut mask = BoolMatrix::new(2, 2);
        mask.set(0, 0, true);
        let err = masked_row_softmax(&scores, &mask).unwrap_err();
        assert_eq!(err, CcoError::FullyMaskedRow { row: 1 });
    }

    #[test]
    fn layer_norm_constant_row_maps_to_bias() {
        let x = Matrix::from_vec(1, 4, vec![7.0; 4]).unwrap();
        let out = layer_norm(&x, &[1.0; 4], &[0.0; 4], 1e-5).unwrap();
        for c in 0..4 {
            assert!(out.get(0, c).abs() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        let x = Matrix::from_vec(1, 2, vec![1.0, 3.0]).unwrap();
        let out = layer_norm(&x, &[1.0; 2], &[0.0; 2], 1e-12).unwrap();
        assert!((out.get(0, 0) + 1.0).abs() <= 1e-6);
        assert!((out.get(0, 1) - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn layer_norm_moments_match() {
        let mut rng = StdRng::seed_from_u64(19);
        let x = random_matrix(&mut rng, 1, 64);
        let out = layer_norm(&x, &[1.0; 64], &[0.0; 64], 1e-12).unwrap();
        let mean: f64 = out.row(0).iter().sum::<f64>() / 64.0;
        let var: f64 = out
            .row(0)
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / 64.0;
        assert!(mean.abs() <= 1e-12);
        assert!((var - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn layer_norm_rejects_non_positive_eps() {
        let x = Matrix::<f64>::zeros(1, 2);
        assert!(layer_norm(&x, &[1.0; 2], &[0.0; 2], 0.0).is_err());
    }
}
