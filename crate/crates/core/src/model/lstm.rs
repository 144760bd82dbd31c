//! Single-layer LSTM with variational input and recurrent dropout and a
//! hand-written backward pass through time.
//!
//! Gate rows in the weight matrices are stacked as input, forget, candidate,
//! output.

use rand::Rng;

use crate::dropout::{dropout_mask, Mode};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, gemm, sigmoid_scalar, MatRef, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `4n x F`
    pub w_ih: Matrix,
    /// `4n x n`
    pub w_hh: Matrix,
    /// `4n`
    pub bias: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(n_inputs: usize, n_units: usize) -> Self {
        LstmParams {
            w_ih: Matrix::zeros(4 * n_units, n_inputs),
            w_hh: Matrix::zeros(4 * n_units, n_units),
            bias: vec![0.0; 4 * n_units],
        }
    }

    /// Uniform `±1/sqrt(n)` weights, forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(n_inputs: usize, n_units: usize, rng: &mut R) -> Self {
        let k = 1.0 / (n_units as f64).sqrt();
        let mut p = LstmParams::zeros(n_inputs, n_units);
        for w in p.w_ih.data_mut().iter_mut().chain(p.w_hh.data_mut()) {
            *w = rng.random_range(-k..k);
        }
        p.bias[n_units..2 * n_units].fill(1.0);
        p
    }

    pub fn n_units(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn n_inputs(&self) -> usize {
        self.w_ih.cols()
    }
}

/// Dropout rates on the LSTM inputs and on the recurrent state. One mask per
/// sequence, reused at every timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub input: f64,
    pub recurrent: f64,
}

impl DropoutSpec {
    pub const NONE: DropoutSpec = DropoutSpec {
        input: 0.0,
        recurrent: 0.0,
    };
}

/// Everything the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Inputs after dropout, `T x F`.
    inputs: Matrix,
    /// Post-activation gates `[i, f, g, o]`, `T x 4n`.
    gates: Matrix,
    /// Cell states, `T x n`.
    cells: Matrix,
    /// `tanh(c_t)`, `T x n`.
    cells_tanh: Matrix,
    /// `h_{t-1}` after recurrent dropout, `T x n`.
    prev_hidden: Matrix,
    recurrent_mask: Option<Vec<f64>>,
}

fn masked_rows(x: &Matrix, mask: Option<&[f64]>) -> Matrix {
    match mask {
        None => x.clone(),
        Some(m) => {
            let mut out = x.clone();
            for r in 0..out.rows() {
                for (v, k) in out.row_mut(r).iter_mut().zip(m) {
                    *v *= k;
                }
            }
            out
        }
    }
}

/// Runs the recurrence from `h_0 = c_0 = 0` and returns the `T x n` hidden states.
pub fn lstm_forward<R: Rng + ?Sized>(
    params: &LstmParams,
    x: &Matrix,
    dropout: DropoutSpec,
    mode: Mode,
    rng: &mut R,
) -> Result<(Matrix, LstmCache)> {
    if x.cols() != params.n_inputs() {
        return Err(Error::invalid(format!(
            "LSTM expects {} input features, got {}",
            params.n_inputs(),
            x.cols()
        )));
    }
    if !x.is_finite() {
        return Err(Error::invalid("LSTM input contains non-finite values"));
    }
    let n = params.n_units();
    let t_len = x.rows();
    let input_mask = dropout_mask(x.cols(), dropout.input, mode, rng)?;
    let recurrent_mask = dropout_mask(n, dropout.recurrent, mode, rng)?;
    let inputs = masked_rows(x, input_mask.as_deref());

    // Input projections for all timesteps at once: T x 4n.
    let mut gates = Matrix::zeros(t_len, 4 * n);
    gemm(
        1.0,
        MatRef::new(inputs.data(), t_len, x.cols()),
        MatRef::new(params.w_ih.data(), 4 * n, x.cols()).t(),
        0.0,
        gates.data_mut(),
    );

    let mut hidden = Matrix::zeros(t_len, n);
    let mut cells = Matrix::zeros(t_len, n);
    let mut cells_tanh = Matrix::zeros(t_len, n);
    let mut prev_hidden = Matrix::zeros(t_len, n);
    let mut h_prev = vec![0.0; n];
    let mut c_prev = vec![0.0; n];
    for t in 0..t_len {
        if let Some(m) = &recurrent_mask {
            for (h, k) in h_prev.iter_mut().zip(m) {
                *h *= k;
            }
        }
        prev_hidden.row_mut(t).copy_from_slice(&h_prev);
        let z = gates.row_mut(t);
        for (r, zr) in z.iter_mut().enumerate() {
            *zr += params.bias[r] + dot(params.w_hh.row(r), &h_prev);
        }
        for v in &mut z[..2 * n] {
            *v = sigmoid_scalar(*v);
        }
        for v in &mut z[2 * n..3 * n] {
            *v = v.tanh();
        }
        for v in &mut z[3 * n..] {
            *v = sigmoid_scalar(*v);
        }
        let (i, rest) = z.split_at(n);
        let (f, rest) = rest.split_at(n);
        let (g, o) = rest.split_at(n);
        let c_row = cells.row_mut(t);
        for u in 0..n {
            c_row[u] = f[u] * c_prev[u] + i[u] * g[u];
        }
        c_prev.copy_from_slice(c_row);
        let ct_row = cells_tanh.row_mut(t);
        let h_row = hidden.row_mut(t);
        for u in 0..n {
            ct_row[u] = c_prev[u].tanh();
            h_row[u] = o[u] * ct_row[u];
        }
        h_prev.copy_from_slice(h_row);
    }

    Ok((
        hidden,
        LstmCache {
            inputs,
            gates,
            cells,
            cells_tanh,
            prev_hidden,
            recurrent_mask,
        },
    ))
}

/// Backpropagates `d_hidden` (`T x n`) through time, accumulating into `grads`.
pub fn lstm_backward(
    params: &LstmParams,
    cache: &LstmCache,
    d_hidden: &Matrix,
    grads: &mut LstmParams,
) -> Result<()> {
    let n = params.n_units();
    let t_len = cache.gates.rows();
    if d_hidden.rows() != t_len || d_hidden.cols() != n {
        return Err(Error::State(format!(
            "hidden-state gradient is {}x{}, forward produced {t_len}x{n}",
            d_hidden.rows(),
            d_hidden.cols()
        )));
    }
    let mut d_gates = Matrix::zeros(t_len, 4 * n);
    let mut dh_next = vec![0.0; n];
    let mut dc_next = vec![0.0; n];
    for t in (0..t_len).rev() {
        let z = cache.gates.row(t);
        let (i, rest) = z.split_at(n);
        let (f, rest) = rest.split_at(n);
        let (g, o) = rest.split_at(n);
        let ct = cache.cells_tanh.row(t);
        let dz = d_gates.row_mut(t);
        for u in 0..n {
            let dh = d_hidden.get(t, u) + dh_next[u];
            let c_prev = if t == 0 { 0.0 } else { cache.cells.get(t - 1, u) };
            let dc = dc_next[u] + dh * o[u] * (1.0 - ct[u] * ct[u]);
            let d_o = dh * ct[u];
            dz[u] = dc * g[u] * i[u] * (1.0 - i[u]);
            dz[n + u] = dc * c_prev * f[u] * (1.0 - f[u]);
            dz[2 * n + u] = dc * i[u] * (1.0 - g[u] * g[u]);
            dz[3 * n + u] = d_o * o[u] * (1.0 - o[u]);
            dc_next[u] = dc * f[u];
        }
        dh_next.fill(0.0);
        for (r, &dzr) in dz.iter().enumerate() {
            axpy(dzr, params.w_hh.row(r), &mut dh_next);
        }
        if let Some(m) = &cache.recurrent_mask {
            for (d, k) in dh_next.iter_mut().zip(m) {
                *d *= k;
            }
        }
    }

    let f_in = params.n_inputs();
    gemm(
        1.0,
        MatRef::new(d_gates.data(), t_len, 4 * n).t(),
        MatRef::new(cache.inputs.data(), t_len, f_in),
        1.0,
        grads.w_ih.data_mut(),
    );
    gemm(
        1.0,
        MatRef::new(d_gates.data(), t_len, 4 * n).t(),
        MatRef::new(cache.prev_hidden.data(), t_len, n),
        1.0,
        grads.w_hh.data_mut(),
    );
    for t in 0..t_len {
        axpy(1.0, d_gates.row(t), &mut grads.bias);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_and_input_give_zero_states() {
        let p = LstmParams::zeros(5, 3);
        let x = Matrix::zeros(4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (h, _) = lstm_forward(&p, &x, DropoutSpec::NONE, Mode::Infer, &mut rng).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // Two units, two inputs; W_hh is irrelevant at t = 1 because h_0 = 0.
        let w_ih = Matrix::from_rows(&[
            vec![0.5, -0.2],
            vec![0.1, 0.3],
            vec![0.0, 0.4],
            vec![-0.3, 0.2],
            vec![0.7, 0.1],
            vec![-0.6, 0.5],
            vec![0.2, 0.2],
            vec![0.1, -0.1],
        ])
        .unwrap();
        let p = LstmParams {
            w_ih,
            w_hh: Matrix::from_fn(8, 2, |r, c| (r as f64 - c as f64) * 9.0),
            bias: vec![0.1, -0.1, 0.0, 0.2, 0.05, 0.0, -0.2, 0.3],
        };
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (h, _) = lstm_forward(&p, &x, DropoutSpec::NONE, Mode::Infer, &mut rng).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        // Pre-activations by hand: w_ih row · [1, 2] + bias.
        let zi: [f64; 2] = [0.5 - 0.4 + 0.1, 0.1 + 0.6 - 0.1];
        let zg: [f64; 2] = [0.7 + 0.2 + 0.05, -0.6 + 1.0 + 0.0];
        let zo: [f64; 2] = [0.2 + 0.4 - 0.2, 0.1 - 0.2 + 0.3];
        for u in 0..2 {
            let c = sig(zi[u]) * zg[u].tanh();
            let want = sig(zo[u]) * c.tanh();
            assert!((h.get(0, u) - want).abs() < 1e-14, "unit {u}");
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmParams::init(6, 4, &mut rng);
        let x = Matrix::from_fn(7, 6, |r, c| ((r * 6 + c) as f64).sin());
        let drop = DropoutSpec { input: 0.2, recurrent: 0.2 };
        let (a, _) = lstm_forward(&p, &x, drop, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (b, _) = lstm_forward(&p, &x, drop, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_feature_count() {
        let p = LstmParams::zeros(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = lstm_forward(&p, &Matrix::zeros(3, 4), DropoutSpec::NONE, Mode::Infer, &mut rng);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }
}
