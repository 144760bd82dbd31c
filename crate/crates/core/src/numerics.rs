//! Dense row-major kernels and the finite-difference gradient oracle.
//!
//! Everything here works in `f64`. Vectors are plain slices; [`Matrix`] owns a
//! row-major buffer. Matrix products go through `matrixmultiply`, which takes
//! arbitrary strides, so transposed operands never need to be materialized.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::invalid(format!(
                "matvec: matrix has {} cols, vector has {}",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `selfᵀ · x`
    pub fn matvec_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::invalid(format!(
                "matvec_t: matrix has {} rows, vector has {}",
                self.rows,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            axpy(xr, self.row(r), &mut out);
        }
        Ok(out)
    }

    /// `self · x + b`
    pub fn affine(&self, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.rows {
            return Err(Error::invalid(format!(
                "affine: bias length {} != rows {}",
                b.len(),
                self.rows
            )));
        }
        let mut y = self.matvec(x)?;
        for (yi, bi) in y.iter_mut().zip(b) {
            *yi += bi;
        }
        Ok(y)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::invalid(format!(
                "matmul: {}x{} · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            1.0,
            MatRef::new(&self.data, self.rows, self.cols),
            MatRef::new(&other.data, other.rows, other.cols),
            0.0,
            &mut out.data,
        );
        Ok(out)
    }
}

/// A borrowed row-major matrix view, optionally read as its transpose.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "view exceeds buffer");
        MatRef {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Leading `rows x cols` block of a row-major buffer whose rows are `stride` long.
    pub fn strided(data: &'a [f64], rows: usize, cols: usize, stride: usize) -> Self {
        assert!(cols <= stride);
        assert!(rows == 0 || data.len() >= (rows - 1) * stride + cols);
        MatRef {
            data,
            rows,
            cols,
            row_stride: stride as isize,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `c = alpha · a · b + beta · c`, with `c` a dense row-major `a.rows x b.cols` buffer.
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    gemm_strided(alpha, a, b, beta, c, b.cols);
}

/// Like [`gemm`] but `c` rows are `c_stride` long (writes a leading block).
pub fn gemm_strided(
    alpha: f64,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: &mut [f64],
    c_stride: usize,
) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(n <= c_stride);
    assert!(m == 0 || c.len() >= (m - 1) * c_stride + n, "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for r in 0..m {
            for v in &mut c[r * c_stride..r * c_stride + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: the asserts above (and in the MatRef constructors) keep every
    // strided access of a, b and c inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            c_stride as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn tanh(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Softmax over `scores`, restricted to positions where `mask` is true.
///
/// Masked positions come out as exactly zero. Scores are shifted by the
/// maximum unmasked score before exponentiation.
pub fn softmax(scores: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid("softmax of empty vector"));
    }
    if let Some(m) = mask {
        if m.len() != scores.len() {
            return Err(Error::invalid(format!(
                "softmax mask length {} != scores length {}",
                m.len(),
                scores.len()
            )));
        }
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let mut max = f64::NEG_INFINITY;
    let mut any = false;
    for (i, &s) in scores.iter().enumerate() {
        if keep(i) {
            if !s.is_finite() {
                return Err(Error::Numeric(format!("softmax score {i} is {s}")));
            }
            any = true;
            max = max.max(s);
        }
    }
    if !any {
        return Err(Error::invalid("softmax with every position masked"));
    }
    let mut out: Vec<f64> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| if keep(i) { (s - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax: given weights `p` and upstream `dp`,
/// returns `dscores`. Masked positions (`p == 0`) receive zero.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(pi, di)| pi * (di - inner)).collect()
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe);
        probe[i] = orig - eps;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "function not finite around coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// `|a - b| / max(1, |a|, |b|)`
#[inline]
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_uniform() {
        let p = softmax(&[0.0; 4], None).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_log_weights() {
        let s = [1f64.ln(), 2f64.ln(), 3f64.ln()];
        let p = softmax(&s, None).unwrap();
        for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_masked() {
        let p = softmax(&[5.0, 5.0, 5.0], Some(&[true, true, false])).unwrap();
        assert_eq!(p[2], 0.0);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_errors() {
        assert!(matches!(softmax(&[], None), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            softmax(&[1.0, 2.0], Some(&[false, false])),
            Err(Error::InvalidArgument(_))
        ));
        assert!(softmax(&[1.0], Some(&[true, true])).is_err());
    }

    #[test]
    fn softmax_large_scores_do_not_overflow() {
        let p = softmax(&[1000.0, 1000.0], None).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_gradient(|x| dot(x, x), &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);

        let g = finite_diff_gradient(|_| 3.5, &[0.3, -7.0, 2.0], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));

        let g = finite_diff_gradient(|x| tanh(x).iter().sum(), &[0.0], 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn finite_diff_rejects_bad_input() {
        assert!(finite_diff_gradient(|x| x[0], &[1.0], 0.0).is_err());
        let r = finite_diff_gradient(|x| if x[0] > 1.0 { f64::NAN } else { 0.0 }, &[1.0], 1e-3);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn elementwise_kernels() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(tanh(&[0.0])[0], 0.0);
        assert_eq!(sigmoid(&[0.0])[0], 0.5);
        assert!(sigmoid(&[-800.0])[0].is_finite());
        assert!(sigmoid(&[800.0])[0] == 1.0);
    }

    #[test]
    fn identity_matvec() {
        let v = vec![1.5, -2.0, 0.25];
        assert_eq!(Matrix::identity(3).matvec(&v).unwrap(), v);
    }

    #[test]
    fn shape_mismatch_is_invalid_argument() {
        let m = Matrix::zeros(2, 3);
        assert!(matches!(m.matvec(&[1.0; 2]), Err(Error::InvalidArgument(_))));
        assert!(m.matmul(&Matrix::zeros(2, 2)).is_err());
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn gemm_transposed_views() {
        let a = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 - 5.0);
        let b = Matrix::from_fn(3, 2, |r, c| 0.5 * r as f64 - c as f64);
        let mut out = vec![0.0; 8];
        gemm(
            1.0,
            MatRef::new(a.data(), 3, 4).t(),
            MatRef::new(b.data(), 3, 2),
            0.0,
            &mut out,
        );
        let want = a.transpose().matmul(&b).unwrap();
        assert_eq!(out, want.data());
    }

    proptest! {
        #[test]
        fn softmax_is_simplex_and_shift_invariant(
            scores in proptest::collection::vec(-30.0f64..30.0, 1..40),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&scores, None).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0 && v <= 1.0));
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let q = softmax(&shifted, None).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn matvec_t_matches_transpose(
            rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000,
        ) {
            let m = Matrix::from_fn(rows, cols, |r, c| ((seed as usize + r * 7 + c * 3) % 11) as f64 - 5.0);
            let x: Vec<f64> = (0..rows).map(|i| i as f64 * 0.5 - 1.0).collect();
            prop_assert_eq!(m.matvec_t(&x).unwrap(), m.transpose().matvec(&x).unwrap());
        }
    }
}
