//! Additive soft attention along the frame axis and along the unit axis of
//! the encoder output.
//!
//! Frame attention scores each hidden state `h_t` with
//! `e_t = v · tanh(W h_t + b)` and pools the rows of `h`. Unit attention uses
//! the same scoring on each column of the zero-padded `n_frames_max x n`
//! hidden matrix, with its own parameters, and pools the columns.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, gemm, gemm_strided, softmax, softmax_backward, MatRef, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `d_att x d_in`
    pub w: Matrix,
    pub b: Vec<f64>,
    pub v: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(d_att: usize, d_in: usize) -> Self {
        AttentionParams {
            w: Matrix::zeros(d_att, d_in),
            b: vec![0.0; d_att],
            v: vec![0.0; d_att],
        }
    }

    /// Glorot-uniform `W`, zero `b`, `v` uniform in `±1/sqrt(d_att)`.
    pub fn init<R: Rng + ?Sized>(d_att: usize, d_in: usize, rng: &mut R) -> Self {
        let mut p = AttentionParams::zeros(d_att, d_in);
        let limit = (6.0 / (d_att + d_in) as f64).sqrt();
        for w in p.w.data_mut() {
            *w = rng.random_range(-limit..limit);
        }
        let k = 1.0 / (d_att as f64).sqrt();
        for v in &mut p.v {
            *v = rng.random_range(-k..k);
        }
        p
    }

    pub fn d_att(&self) -> usize {
        self.w.rows()
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    fn check(&self) -> Result<()> {
        if self.b.len() != self.d_att() || self.v.len() != self.d_att() {
            return Err(Error::invalid("attention b/v length must equal rows of W"));
        }
        Ok(())
    }
}

/// Output of frame attention plus what its backward pass needs.
#[derive(Debug, Clone)]
pub struct FrameAttention {
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
    /// `tanh(W h_t + b)`, `T x d_att`.
    activations: Matrix,
}

/// Attention across frames: `alpha = softmax(e)` over unmasked rows and
/// `c = Σ_t alpha_t h_t`. Masked rows get weight exactly zero.
pub fn frame_attention(
    h: &Matrix,
    p: &AttentionParams,
    frame_mask: Option<&[bool]>,
) -> Result<FrameAttention> {
    p.check()?;
    if h.cols() != p.d_in() {
        return Err(Error::invalid(format!(
            "frame attention expects {} units, hidden states have {}",
            p.d_in(),
            h.cols()
        )));
    }
    if h.rows() == 0 {
        return Err(Error::invalid("frame attention over zero frames"));
    }
    let (t_len, d) = (h.rows(), p.d_att());
    let mut act = Matrix::zeros(t_len, d);
    gemm(
        1.0,
        MatRef::new(h.data(), t_len, h.cols()),
        MatRef::new(p.w.data(), d, h.cols()).t(),
        0.0,
        act.data_mut(),
    );
    let mut scores = vec![0.0; t_len];
    for (t, score) in scores.iter_mut().enumerate() {
        let row = act.row_mut(t);
        for (a, b) in row.iter_mut().zip(&p.b) {
            *a = (*a + b).tanh();
        }
        *score = dot(row, &p.v);
    }
    let alpha = softmax(&scores, frame_mask)?;
    let mut context = vec![0.0; h.cols()];
    for (t, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            axpy(a, h.row(t), &mut context);
        }
    }
    Ok(FrameAttention {
        alpha,
        context,
        activations: act,
    })
}

/// Accumulates parameter gradients into `grads` and hidden-state gradients into `d_h`.
pub fn frame_attention_backward(
    h: &Matrix,
    p: &AttentionParams,
    fwd: &FrameAttention,
    d_context: &[f64],
    grads: &mut AttentionParams,
    d_h: &mut Matrix,
) {
    let (t_len, d) = (h.rows(), p.d_att());
    let d_alpha: Vec<f64> = (0..t_len).map(|t| dot(d_context, h.row(t))).collect();
    let d_scores = softmax_backward(&fwd.alpha, &d_alpha);
    let mut d_pre = Matrix::zeros(t_len, d);
    for t in 0..t_len {
        if fwd.alpha[t] != 0.0 {
            axpy(fwd.alpha[t], d_context, d_h.row_mut(t));
        }
        let ds = d_scores[t];
        if ds == 0.0 {
            continue;
        }
        let a = fwd.activations.row(t);
        axpy(ds, a, &mut grads.v);
        for ((dp, &ak), &vk) in d_pre.row_mut(t).iter_mut().zip(a).zip(&p.v) {
            *dp = ds * vk * (1.0 - ak * ak);
        }
        axpy(1.0, d_pre.row(t), &mut grads.b);
    }
    gemm(
        1.0,
        MatRef::new(d_pre.data(), t_len, d).t(),
        MatRef::new(h.data(), t_len, h.cols()),
        1.0,
        grads.w.data_mut(),
    );
    gemm(
        1.0,
        MatRef::new(d_pre.data(), t_len, d),
        MatRef::new(p.w.data(), d, h.cols()),
        1.0,
        d_h.data_mut(),
    );
}

#[derive(Debug, Clone)]
pub struct UnitAttention {
    pub beta: Vec<f64>,
    /// Length `n_frames_max`.
    pub context: Vec<f64>,
    /// `tanh(W h_col + b)` for every unit column, `d_att x n`.
    activations: Matrix,
}

/// Attention across units of a hidden matrix that is implicitly zero-padded
/// from `h.rows()` up to `p.d_in()` rows.
pub(crate) fn unit_attention_padded(h: &Matrix, p: &AttentionParams) -> Result<UnitAttention> {
    p.check()?;
    let n_frames_max = p.d_in();
    let (t_len, n) = (h.rows(), h.cols());
    if t_len > n_frames_max {
        return Err(Error::invalid(format!(
            "{t_len} frames exceed the unit-attention width of {n_frames_max}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("unit attention over zero units"));
    }
    let d = p.d_att();
    // Padded rows are zero, so only the first T columns of W contribute.
    let mut act = Matrix::zeros(d, n);
    gemm(
        1.0,
        MatRef::strided(p.w.data(), d, t_len, n_frames_max),
        MatRef::new(h.data(), t_len, n),
        0.0,
        act.data_mut(),
    );
    for k in 0..d {
        let bk = p.b[k];
        for a in act.row_mut(k) {
            *a = (*a + bk).tanh();
        }
    }
    let scores = act.matvec_t(&p.v)?;
    let beta = softmax(&scores, None)?;
    let mut context = h.matvec(&beta)?;
    context.resize(n_frames_max, 0.0);
    Ok(UnitAttention {
        beta,
        context,
        activations: act,
    })
}

/// Attention across the `n` unit columns of the padded `n_frames_max x n`
/// hidden matrix: `beta = softmax(e*)`, `c* = Σ_u beta_u h[:, u]`.
pub fn unit_attention(h_pad: &Matrix, p: &AttentionParams) -> Result<UnitAttention> {
    if h_pad.rows() != p.d_in() {
        return Err(Error::invalid(format!(
            "unit attention needs exactly {} rows, got {}",
            p.d_in(),
            h_pad.rows()
        )));
    }
    unit_attention_padded(h_pad, p)
}

/// Backward pass of [`unit_attention_padded`]; `d_h` is `T x n`.
pub fn unit_attention_backward(
    h: &Matrix,
    p: &AttentionParams,
    fwd: &UnitAttention,
    d_context: &[f64],
    grads: &mut AttentionParams,
    d_h: &mut Matrix,
) {
    let n_frames_max = p.d_in();
    let (t_len, n) = (h.rows(), h.cols());
    let d = p.d_att();
    let dc = &d_context[..t_len];
    let d_beta = h.matvec_t(dc).expect("shapes checked in forward");
    let d_scores = softmax_backward(&fwd.beta, &d_beta);
    for t in 0..t_len {
        if dc[t] != 0.0 {
            axpy(dc[t], &fwd.beta, d_h.row_mut(t));
        }
    }
    let mut d_pre = Matrix::zeros(d, n);
    for k in 0..d {
        let a = fwd.activations.row(k);
        grads.v[k] += dot(a, &d_scores);
        let vk = p.v[k];
        let row = d_pre.row_mut(k);
        for u in 0..n {
            row[u] = vk * d_scores[u] * (1.0 - a[u] * a[u]);
        }
        grads.b[k] += row.iter().sum::<f64>();
    }
    gemm_strided(
        1.0,
        MatRef::new(d_pre.data(), d, n),
        MatRef::new(h.data(), t_len, n).t(),
        1.0,
        grads.w.data_mut(),
        n_frames_max,
    );
    gemm(
        1.0,
        MatRef::strided(p.w.data(), d, t_len, n_frames_max).t(),
        MatRef::new(d_pre.data(), d, n),
        1.0,
        d_h.data_mut(),
    );
}

/// Frame and unit weights with the contexts they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub alpha: Vec<f64>,
    pub beta: Option<Vec<f64>>,
    pub c: Vec<f64>,
    pub c_star: Option<Vec<f64>>,
    /// `[c, c*]`, or `c` alone when the unit branch is disabled.
    pub f: Vec<f64>,
}

/// Frame attention, plus unit attention when `p_unit` is given, concatenated
/// into `f = [c, c*]`.
pub fn cross_attention(
    h: &Matrix,
    p_frame: &AttentionParams,
    p_unit: Option<&AttentionParams>,
    frame_mask: Option<&[bool]>,
) -> Result<AttentionTrace> {
    let fa = frame_attention(h, p_frame, frame_mask)?;
    let mut f = fa.context.clone();
    let (beta, c_star) = match p_unit {
        Some(pu) => {
            let ua = unit_attention_padded(h, pu)?;
            f.extend_from_slice(&ua.context);
            (Some(ua.beta), Some(ua.context))
        }
        None => (None, None),
    };
    Ok(AttentionTrace {
        alpha: fa.alpha,
        beta,
        c: fa.context,
        c_star,
        f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_rows_get_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = AttentionParams::init(4, 3, &mut rng);
        let h = Matrix::from_fn(5, 3, |_, c| c as f64 * 0.3 - 0.2);
        let fa = frame_attention(&h, &p, None).unwrap();
        for a in &fa.alpha {
            assert!((a - 0.2).abs() < 1e-15);
        }
        for (c, h1) in fa.context.iter().zip(h.row(0)) {
            assert!((c - h1).abs() < 1e-14);
        }
    }

    #[test]
    fn single_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AttentionParams::init(4, 3, &mut rng);
        let h = Matrix::from_rows(&[vec![0.1, -0.4, 0.9]]).unwrap();
        let fa = frame_attention(&h, &p, None).unwrap();
        assert_eq!(fa.alpha, vec![1.0]);
        assert_eq!(fa.context, h.row(0));
    }

    #[test]
    fn three_frame_toy_matches_direct_evaluation() {
        let p = AttentionParams {
            w: Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap(),
            b: vec![0.1, -0.3],
            v: vec![2.0, -1.0],
        };
        let h = Matrix::from_rows(&[vec![0.2, 0.4], vec![-0.5, 0.1], vec![0.3, -0.6]]).unwrap();
        // Scores written out term by term.
        let e = |h0: f64, h1: f64| {
            2.0 * (1.0 * h0 - 1.0 * h1 + 0.1).tanh() - (0.5 * h0 + 2.0 * h1 - 0.3).tanh()
        };
        let es = [e(0.2, 0.4), e(-0.5, 0.1), e(0.3, -0.6)];
        let z: f64 = es.iter().map(|v| v.exp()).sum();
        let alpha: Vec<f64> = es.iter().map(|v| v.exp() / z).collect();
        let c0 = alpha[0] * 0.2 + alpha[1] * -0.5 + alpha[2] * 0.3;
        let c1 = alpha[0] * 0.4 + alpha[1] * 0.1 + alpha[2] * -0.6;
        let fa = frame_attention(&h, &p, None).unwrap();
        for (a, b) in fa.alpha.iter().zip(&alpha) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((fa.context[0] - c0).abs() < 1e-14);
        assert!((fa.context[1] - c1).abs() < 1e-14);
    }

    #[test]
    fn padded_rows_get_zero_weight_regardless_of_placement() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = AttentionParams::init(3, 2, &mut rng);
        let real = [vec![0.3, -0.2], vec![0.8, 0.5], vec![-0.1, 0.4]];
        let junk = [vec![9.0, 9.0], vec![-7.0, 3.0]];
        let base = frame_attention(&Matrix::from_rows(&real).unwrap(), &p, None).unwrap();

        let rows = vec![real[0].clone(), junk[0].clone(), real[1].clone(), junk[1].clone(), real[2].clone()];
        let mask = [true, false, true, false, true];
        let padded = frame_attention(&Matrix::from_rows(&rows).unwrap(), &p, Some(&mask)).unwrap();
        assert_eq!(padded.alpha[1], 0.0);
        assert_eq!(padded.alpha[3], 0.0);
        for (a, b) in [padded.alpha[0], padded.alpha[2], padded.alpha[4]].iter().zip(&base.alpha) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in padded.context.iter().zip(&base.context) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn all_masked_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = AttentionParams::init(2, 2, &mut rng);
        let h = Matrix::zeros(2, 2);
        assert!(frame_attention(&h, &p, Some(&[false, false])).is_err());
    }

    #[test]
    fn identical_columns_get_uniform_unit_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AttentionParams::init(3, 4, &mut rng);
        let h = Matrix::from_fn(4, 5, |r, _| r as f64 * 0.2 - 0.3);
        let ua = unit_attention(&h, &p).unwrap();
        for b in &ua.beta {
            assert!((b - 0.2).abs() < 1e-15);
        }
        for (c, col) in ua.context.iter().zip(h.column(0)) {
            assert!((c - col).abs() < 1e-14);
        }
    }

    #[test]
    fn single_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AttentionParams::init(3, 4, &mut rng);
        let h = Matrix::from_fn(4, 1, |r, _| r as f64 - 1.5);
        let ua = unit_attention(&h, &p).unwrap();
        assert_eq!(ua.beta, vec![1.0]);
        assert_eq!(ua.context, h.column(0));
    }

    #[test]
    fn unit_attention_requires_exact_row_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AttentionParams::init(3, 4, &mut rng);
        assert!(unit_attention(&Matrix::zeros(3, 2), &p).is_err());
        assert!(unit_attention(&Matrix::zeros(5, 2), &p).is_err());
    }

    #[test]
    fn implicit_padding_matches_explicit_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = AttentionParams::init(3, 6, &mut rng);
        let h = Matrix::from_fn(4, 5, |r, c| ((r * 5 + c) as f64 * 0.7).sin());
        let mut padded = Matrix::zeros(6, 5);
        padded.data_mut()[..20].copy_from_slice(h.data());
        let a = unit_attention_padded(&h, &p).unwrap();
        let b = unit_attention(&padded, &p).unwrap();
        for (x, y) in a.beta.iter().zip(&b.beta) {
            assert!((x - y).abs() < 1e-14);
        }
        assert_eq!(a.context.len(), 6);
        for (x, y) in a.context.iter().zip(&b.context) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn cross_dimension_and_degenerate_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pf = AttentionParams::init(4, 5, &mut rng);
        let pu = AttentionParams::init(4, 9, &mut rng);
        let h = Matrix::from_fn(7, 5, |r, c| ((r + 2 * c) as f64).cos() * 0.5);
        let trace = cross_attention(&h, &pf, Some(&pu), None).unwrap();
        assert_eq!(trace.f.len(), 5 + 9);
        assert_eq!(&trace.f[..5], &trace.c[..]);
        assert_eq!(&trace.f[5..], &trace.c_star.as_ref().unwrap()[..]);

        let conv = cross_attention(&h, &pf, None, None).unwrap();
        let plain = frame_attention(&h, &pf, None).unwrap();
        assert_eq!(conv.f, plain.context);
        assert_eq!(conv.alpha, plain.alpha);
        assert!(conv.beta.is_none());
    }
}
