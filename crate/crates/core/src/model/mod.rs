//! The estimator: LSTM encoder, an utterance-level representation chosen by
//! [`Technique`], and two ReLU regression heads (height, age).

pub mod attention;
pub mod checkpoint;
pub mod head;
pub mod lstm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dropout::{dropout_mask, Mode};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, Matrix};
use attention::{
    frame_attention, frame_attention_backward, unit_attention_backward, unit_attention_padded,
    AttentionParams, AttentionTrace, FrameAttention, UnitAttention,
};
pub use head::{mse_loss, multitask_loss, regression_head, TaskWeights};
use lstm::{lstm_backward, lstm_forward, DropoutSpec, LstmCache, LstmParams};

/// How the hidden-state sequence is reduced to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    /// The final hidden state.
    LastHidden,
    /// Frame attention only: `f = c`.
    Conventional,
    /// Frame and unit attention: `f = [c, c*]`.
    Cross,
}

impl Technique {
    pub const ALL: [Technique; 3] = [Technique::LastHidden, Technique::Conventional, Technique::Cross];

    pub fn as_str(&self) -> &'static str {
        match self {
            Technique::LastHidden => "last_hidden",
            Technique::Conventional => "conventional",
            Technique::Cross => "cross",
        }
    }
}

impl std::fmt::Display for Technique {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Technique {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Technique::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown technique '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub technique: Technique,
    pub n_inputs: usize,
    pub n_units: usize,
    pub d_att: usize,
    /// Fixed padded length used by unit attention; longer inputs are truncated.
    pub n_frames_max: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            technique: Technique::Cross,
            n_inputs: crate::features::N_FEATURES,
            n_units: 128,
            d_att: 128,
            n_frames_max: 600,
        }
    }
}

impl ModelConfig {
    /// Length of the representation `f` fed to the heads.
    pub fn repr_dim(&self) -> usize {
        match self.technique {
            Technique::LastHidden | Technique::Conventional => self.n_units,
            Technique::Cross => self.n_units + self.n_frames_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inputs == 0 || self.n_units == 0 || self.d_att == 0 || self.n_frames_max == 0 {
            return Err(Error::invalid("model dimensions must all be positive"));
        }
        Ok(())
    }
}

/// Dropout rates on LSTM inputs, recurrent state, and the head input `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutRates {
    pub input: f64,
    pub recurrent: f64,
    pub head: f64,
}

impl DropoutRates {
    pub const NONE: DropoutRates = DropoutRates {
        input: 0.0,
        recurrent: 0.0,
        head: 0.0,
    };
}

/// Every learnable tensor. Also used to hold gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub lstm: LstmParams,
    pub frame_att: Option<AttentionParams>,
    pub unit_att: Option<AttentionParams>,
    pub v_height: Vec<f64>,
    pub v_age: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (frame_att, unit_att) = match config.technique {
            Technique::LastHidden => (None, None),
            Technique::Conventional => (Some(AttentionParams::zeros(config.d_att, config.n_units)), None),
            Technique::Cross => (
                Some(AttentionParams::zeros(config.d_att, config.n_units)),
                Some(AttentionParams::zeros(config.d_att, config.n_frames_max)),
            ),
        };
        ModelParams {
            config: config.clone(),
            lstm: LstmParams::zeros(config.n_inputs, config.n_units),
            frame_att,
            unit_att,
            v_height: vec![0.0; config.repr_dim()],
            v_age: vec![0.0; config.repr_dim()],
        }
    }

    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut p = ModelParams::zeros(config);
        p.lstm = LstmParams::init(config.n_inputs, config.n_units, rng);
        if p.frame_att.is_some() {
            p.frame_att = Some(AttentionParams::init(config.d_att, config.n_units, rng));
        }
        if p.unit_att.is_some() {
            p.unit_att = Some(AttentionParams::init(config.d_att, config.n_frames_max, rng));
        }
        let k = 1.0 / (config.repr_dim() as f64).sqrt();
        for v in p.v_height.iter_mut().chain(p.v_age.iter_mut()) {
            *v = rng.random_range(-k..k);
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(&self.config)
    }

    /// Named tensors with their shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let mut out: Vec<(&'static str, Vec<usize>, &[f64])> = vec![
            ("lstm.w_ih", vec![self.lstm.w_ih.rows(), self.lstm.w_ih.cols()], self.lstm.w_ih.data()),
            ("lstm.w_hh", vec![self.lstm.w_hh.rows(), self.lstm.w_hh.cols()], self.lstm.w_hh.data()),
            ("lstm.bias", vec![self.lstm.bias.len()], &self.lstm.bias),
        ];
        for (prefix, att) in [("frame_att", &self.frame_att), ("unit_att", &self.unit_att)] {
            if let Some(a) = att {
                let names: [&'static str; 3] = match prefix {
                    "frame_att" => ["frame_att.w", "frame_att.b", "frame_att.v"],
                    _ => ["unit_att.w", "unit_att.b", "unit_att.v"],
                };
                out.push((names[0], vec![a.w.rows(), a.w.cols()], a.w.data()));
                out.push((names[1], vec![a.b.len()], &a.b));
                out.push((names[2], vec![a.v.len()], &a.v));
            }
        }
        out.push(("head.v_height", vec![self.v_height.len()], &self.v_height));
        out.push(("head.v_age", vec![self.v_age.len()], &self.v_age));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("lstm.w_ih", self.lstm.w_ih.data_mut()),
            ("lstm.w_hh", self.lstm.w_hh.data_mut()),
            ("lstm.bias", &mut self.lstm.bias),
        ];
        if let Some(a) = &mut self.frame_att {
            out.push(("frame_att.w", a.w.data_mut()));
            out.push(("frame_att.b", &mut a.b));
            out.push(("frame_att.v", &mut a.v));
        }
        if let Some(a) = &mut self.unit_att {
            out.push(("unit_att.w", a.w.data_mut()));
            out.push(("unit_att.b", &mut a.b));
            out.push(("unit_att.v", &mut a.v));
        }
        out.push(("head.v_height", &mut self.v_height));
        out.push(("head.v_age", &mut self.v_age));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, _, d)| d.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::invalid(format!(
                "flat parameter vector has {} values, model has {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for (_, t) in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) {
        for ((_, dst), (_, _, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(alpha, src, dst);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, _, d)| dot(d, d)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }

    /// Runs the model on one `T x F` input. Inputs longer than
    /// `n_frames_max` are truncated to their first `n_frames_max` frames.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Matrix,
        mode: Mode,
        dropout: DropoutRates,
        rng: &mut R,
    ) -> Result<Forward> {
        let cfg = &self.config;
        if x.rows() == 0 {
            return Err(Error::invalid("empty input sequence"));
        }
        let truncated;
        let x = if x.rows() > cfg.n_frames_max {
            truncated = Matrix::new(
                cfg.n_frames_max,
                x.cols(),
                x.data()[..cfg.n_frames_max * x.cols()].to_vec(),
            )?;
            &truncated
        } else {
            x
        };
        let spec = DropoutSpec {
            input: dropout.input,
            recurrent: dropout.recurrent,
        };
        let (hidden, lstm_cache) = lstm_forward(&self.lstm, x, spec, mode, rng)?;

        let (frame, unit, f) = match cfg.technique {
            Technique::LastHidden => (None, None, hidden.row(hidden.rows() - 1).to_vec()),
            Technique::Conventional | Technique::Cross => {
                let fa = frame_attention(&hidden, self.frame_att.as_ref().expect("frame attention"), None)?;
                let mut f = fa.context.clone();
                let ua = match &self.unit_att {
                    Some(pu) => {
                        let ua = unit_attention_padded(&hidden, pu)?;
                        f.extend_from_slice(&ua.context);
                        Some(ua)
                    }
                    None => None,
                };
                (Some(fa), ua, f)
            }
        };

        let head_mask = dropout_mask(f.len(), dropout.head, mode, rng)?;
        let f_drop = match &head_mask {
            Some(m) => f.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => f.clone(),
        };
        let s_height = dot(&self.v_height, &f_drop);
        let s_age = dot(&self.v_age, &f_drop);
        Ok(Forward {
            hidden,
            lstm_cache,
            frame,
            unit,
            f,
            f_drop,
            head_mask,
            s_height,
            s_age,
        })
    }

    /// Inference-mode prediction.
    pub fn predict(&self, x: &Matrix) -> Result<Forward> {
        // No randomness is drawn in inference mode.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.forward(x, Mode::Infer, DropoutRates::NONE, &mut rng)
    }

    /// Accumulates into `grads` the gradient of a loss whose derivatives
    /// with respect to the two predictions are `d_height` and `d_age`.
    /// A head whose derivative is zero is skipped entirely.
    pub fn backward(&self, fwd: &Forward, d_height: f64, d_age: f64, grads: &mut ModelParams) -> Result<()> {
        if grads.config != self.config {
            return Err(Error::State("gradient buffer built for a different model".into()));
        }
        let mut d_f = vec![0.0; fwd.f.len()];
        for (d_pred, s, v, gv) in [
            (d_height, fwd.s_height, &self.v_height, &mut grads.v_height),
            (d_age, fwd.s_age, &self.v_age, &mut grads.v_age),
        ] {
            // ReLU subgradient at zero is zero.
            if d_pred == 0.0 || s <= 0.0 {
                continue;
            }
            axpy(d_pred, &fwd.f_drop, gv);
            axpy(d_pred, v, &mut d_f);
        }
        if let Some(m) = &fwd.head_mask {
            for (d, k) in d_f.iter_mut().zip(m) {
                *d *= k;
            }
        }

        let n = self.config.n_units;
        let t_len = fwd.hidden.rows();
        let mut d_hidden = Matrix::zeros(t_len, n);
        match self.config.technique {
            Technique::LastHidden => d_hidden.row_mut(t_len - 1).copy_from_slice(&d_f),
            Technique::Conventional | Technique::Cross => {
                let (fa, pf, gf) = (
                    fwd.frame.as_ref().ok_or_else(|| Error::State("missing frame-attention cache".into()))?,
                    self.frame_att.as_ref().expect("frame attention"),
                    grads.frame_att.as_mut().expect("frame attention"),
                );
                frame_attention_backward(&fwd.hidden, pf, fa, &d_f[..n], gf, &mut d_hidden);
                if let Some(pu) = &self.unit_att {
                    let ua = fwd.unit.as_ref().ok_or_else(|| Error::State("missing unit-attention cache".into()))?;
                    let gu = grads.unit_att.as_mut().expect("unit attention");
                    unit_attention_backward(&fwd.hidden, pu, ua, &d_f[n..], gu, &mut d_hidden);
                }
            }
        }
        lstm_backward(&self.lstm, &fwd.lstm_cache, &d_hidden, &mut grads.lstm)
    }
}

/// Forward-pass state for one utterance.
#[derive(Debug, Clone)]
pub struct Forward {
    pub hidden: Matrix,
    lstm_cache: LstmCache,
    frame: Option<FrameAttention>,
    unit: Option<UnitAttention>,
    /// Representation before head dropout.
    pub f: Vec<f64>,
    f_drop: Vec<f64>,
    head_mask: Option<Vec<f64>>,
    s_height: f64,
    s_age: f64,
}

impl Forward {
    pub fn height(&self) -> f64 {
        self.s_height.max(0.0)
    }

    pub fn age(&self) -> f64 {
        self.s_age.max(0.0)
    }

    pub fn frame_weights(&self) -> Option<&[f64]> {
        self.frame.as_ref().map(|fa| fa.alpha.as_slice())
    }

    /// Attention weights and contexts; `None` for the last-hidden-state model.
    pub fn trace(&self) -> Option<AttentionTrace> {
        let fa = self.frame.as_ref()?;
        Some(AttentionTrace {
            alpha: fa.alpha.clone(),
            beta: self.unit.as_ref().map(|u| u.beta.clone()),
            c: fa.context.clone(),
            c_star: self.unit.as_ref().map(|u| u.context.clone()),
            f: self.f.clone(),
        })
    }
}

/// One utterance in a batch: model input, targets, and the seed for its
/// dropout masks.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub input: &'a Matrix,
    pub height: f64,
    pub age: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct BatchGradient {
    /// `a * mse_height + (1 - a) * mse_age`
    pub loss: f64,
    pub mse_height: f64,
    pub mse_age: f64,
    pub grads: ModelParams,
}

struct ItemResult {
    pred_height: f64,
    pred_age: f64,
    grads: Option<ModelParams>,
}

fn run_item(
    params: &ModelParams,
    item: &BatchItem<'_>,
    weights: TaskWeights,
    scale: f64,
    mode: Mode,
    dropout: DropoutRates,
    with_grad: bool,
) -> Result<ItemResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(item.seed);
    let fwd = params.forward(item.input, mode, dropout, &mut rng)?;
    let (ph, pa) = (fwd.height(), fwd.age());
    let grads = if with_grad {
        let mut g = params.zeros_like();
        let d_height = weights.height * (2.0 * (ph - item.height) * scale);
        let d_age = weights.age * (2.0 * (pa - item.age) * scale);
        params.backward(&fwd, d_height, d_age, &mut g)?;
        Some(g)
    } else {
        None
    };
    Ok(ItemResult {
        pred_height: ph,
        pred_age: pa,
        grads,
    })
}

fn summarize(items: &[BatchItem<'_>], results: &[ItemResult], weights: TaskWeights) -> Result<(f64, f64, f64)> {
    let y_h: Vec<f64> = items.iter().map(|i| i.height).collect();
    let y_a: Vec<f64> = items.iter().map(|i| i.age).collect();
    let p_h: Vec<f64> = results.iter().map(|r| r.pred_height).collect();
    let p_a: Vec<f64> = results.iter().map(|r| r.pred_age).collect();
    let mse_h = mse_loss(&y_h, &p_h)?;
    let mse_a = mse_loss(&y_a, &p_a)?;
    Ok((weights.combine(mse_h, mse_a), mse_h, mse_a))
}

/// Batch loss `a * MSE_height + (1 - a) * MSE_age` and its gradient.
///
/// Items may be processed in parallel; their gradients are summed in batch
/// order, so the result does not depend on the thread count.
pub fn batch_gradient(
    params: &ModelParams,
    items: &[BatchItem<'_>],
    weights: TaskWeights,
    mode: Mode,
    dropout: DropoutRates,
) -> Result<BatchGradient> {
    if items.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let scale = 1.0 / items.len() as f64;
    let results: Vec<ItemResult> = items
        .par_iter()
        .map(|item| run_item(params, item, weights, scale, mode, dropout, true))
        .collect::<Result<_>>()?;
    let (loss, mse_height, mse_age) = summarize(items, &results, weights)?;
    let mut grads = params.zeros_like();
    for r in &results {
        grads.add_scaled(1.0, r.grads.as_ref().expect("gradient requested"));
    }
    Ok(BatchGradient {
        loss,
        mse_height,
        mse_age,
        grads,
    })
}

/// The same loss as [`batch_gradient`] without the backward pass.
pub fn batch_loss(
    params: &ModelParams,
    items: &[BatchItem<'_>],
    weights: TaskWeights,
    mode: Mode,
    dropout: DropoutRates,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let results: Vec<ItemResult> = items
        .par_iter()
        .map(|item| run_item(params, item, weights, 1.0, mode, dropout, false))
        .collect::<Result<_>>()?;
    summarize(items, &results, weights).map(|(l, _, _)| l)
}
