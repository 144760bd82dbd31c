//! Mini-batch training with Adam, early stopping, and validation-based
//! choice of the multi-task weight.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{check_disjoint_speakers, with_gender_column, Gender, UtteranceRecord};
use crate::dropout::Mode;
use crate::error::{Error, Result};
use crate::eval::{std_dev, GenderHandling, Regressor};
use crate::features::{spec_augment, FeatureMatrix, SpecAugmentPolicy};
use crate::model::checkpoint::Checkpoint;
use crate::model::{batch_gradient, BatchItem, DropoutRates, ModelConfig, ModelParams, TaskWeights, Technique};
use crate::numerics::{axpy, dot, Matrix};

pub use crate::dropout::apply_dropout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub technique: Technique,
    pub n_units: usize,
    pub d_att: usize,
    pub n_frames_max: usize,
    /// Dropout on LSTM inputs.
    pub dropout: f64,
    pub recurrent_dropout: f64,
    /// Dropout on the representation fed to the heads.
    pub head_dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier on `learning_rate` for the two head vectors.
    pub head_lr_multiplier: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub a_grid: Vec<f64>,
    pub seed: u64,
    /// One model for both targets (weight chosen from `a_grid`) instead of
    /// one model per target.
    pub multitask: bool,
    pub gender_feature: bool,
    pub spec_augment: SpecAugmentPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        TrainConfig {
            technique: m.technique,
            n_units: m.n_units,
            d_att: m.d_att,
            n_frames_max: m.n_frames_max,
            dropout: 0.2,
            recurrent_dropout: 0.2,
            head_dropout: 0.2,
            batch_size: 32,
            learning_rate: 1e-3,
            head_lr_multiplier: 100.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            max_epochs: 100,
            patience: 10,
            a_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            seed: 0,
            multitask: true,
            gender_feature: false,
            spec_augment: SpecAugmentPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("dropout", self.dropout),
            ("recurrent_dropout", self.recurrent_dropout),
            ("head_dropout", self.head_dropout),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} = {r} is outside [0, 1)")));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch_size and max_epochs must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.head_lr_multiplier > 0.0) {
            return Err(Error::invalid("learning_rate and head_lr_multiplier must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::invalid("Adam needs betas in [0, 1) and a positive epsilon"));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::invalid("clip_norm must be non-negative"));
        }
        if self.multitask {
            if self.a_grid.is_empty() {
                return Err(Error::invalid("a_grid must be non-empty for multi-task training"));
            }
            if let Some(a) = self.a_grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
                return Err(Error::invalid(format!("a_grid value {a} is outside [0, 1]")));
            }
        }
        self.spec_augment.validate()
    }

    pub fn model_config(&self, n_inputs: usize) -> ModelConfig {
        ModelConfig {
            technique: self.technique,
            n_inputs,
            n_units: self.n_units,
            d_att: self.d_att,
            n_frames_max: self.n_frames_max,
        }
    }

    pub fn dropout_rates(&self) -> DropoutRates {
        DropoutRates {
            input: self.dropout,
            recurrent: self.recurrent_dropout,
            head: self.head_dropout,
        }
    }
}

/// Adaptive moment estimation.
#[derive(Debug, Clone)]
pub struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: i32,
    pub lr: f64,
    /// Learning rate for tensors named `head.*`.
    pub head_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr,
            head_lr: lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn from_config(params: &ModelParams, cfg: &TrainConfig) -> Self {
        let mut adam = Adam::new(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
        adam.head_lr = cfg.learning_rate * cfg.head_lr_multiplier;
        adam
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads.tensors());
        for ((((name, p), (_, m)), (_, v)), (_, _, g)) in tensors {
            let lr = if name.starts_with("head.") { self.head_lr } else { self.lr };
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` so its global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.squared_norm().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// SplitMix64 finalizer over a sequence of words.
fn mix(words: &[u64]) -> u64 {
    let mut z: u64 = 0x9E37_79B9_7F4A_7C15;
    for &w in words {
        z = z.wrapping_add(w).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_AUGMENT: u64 = 3;
const STREAM_DROPOUT: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss_height: f64,
    pub val_loss_age: f64,
    /// The weighted combination the run is optimizing.
    pub val_loss: f64,
}

/// One optimization run at a fixed task weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub a: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept (1-based).
    pub selected_epoch: usize,
    /// `rmse_height / std_height + rmse_age / std_age` on validation at the
    /// selected epoch.
    pub val_score: f64,
}

impl RunHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.selected_epoch - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub runs: Vec<RunHistory>,
    /// The chosen weight when training one model for both targets.
    pub selected_a: Option<f64>,
}

impl TrainHistory {
    /// One JSON object per epoch per run.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for run in &self.runs {
            for e in &run.epochs {
                let line = serde_json::json!({
                    "a": run.a,
                    "epoch": e.epoch,
                    "train_loss": e.train_loss,
                    "val_loss_height": e.val_loss_height,
                    "val_loss_age": e.val_loss_age,
                    "val_loss": e.val_loss,
                    "selected": e.epoch == run.selected_epoch,
                });
                out.push_str(&line.to_string());
                out.push('\n');
            }
        }
        out
    }
}

/// A trained predictor for both targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Joint { params: ModelParams, a: f64 },
    Separate { height: ModelParams, age: ModelParams },
}

impl Estimator {
    pub fn predict(&self, x: &Matrix) -> Result<(f64, f64)> {
        match self {
            Estimator::Joint { params, .. } => {
                let f = params.predict(x)?;
                Ok((f.height(), f.age()))
            }
            Estimator::Separate { height, age } => Ok((height.predict(x)?.height(), age.predict(x)?.age())),
        }
    }

    pub fn technique(&self) -> Technique {
        match self {
            Estimator::Joint { params, .. } => params.config.technique,
            Estimator::Separate { height, .. } => height.config.technique,
        }
    }

    pub fn multitask(&self) -> bool {
        matches!(self, Estimator::Joint { .. })
    }

    /// The model whose attention is inspected: the joint model, or the
    /// height model when targets are trained separately.
    pub fn attention_model(&self) -> &ModelParams {
        match self {
            Estimator::Joint { params, .. } => params,
            Estimator::Separate { height, .. } => height,
        }
    }

    fn put(&self, ck: &mut Checkpoint, prefix: &str) {
        match self {
            Estimator::Joint { params, a } => {
                ck.meta.insert(format!("{prefix}.kind"), "joint".into());
                ck.meta.insert(format!("{prefix}.a"), a.to_string());
                ck.put_model(&format!("{prefix}.joint"), params);
            }
            Estimator::Separate { height, age } => {
                ck.meta.insert(format!("{prefix}.kind"), "separate".into());
                ck.put_model(&format!("{prefix}.height"), height);
                ck.put_model(&format!("{prefix}.age"), age);
            }
        }
    }

    fn get(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        match ck.meta_value(&format!("{prefix}.kind"))? {
            "joint" => Ok(Estimator::Joint {
                params: ck.get_model(&format!("{prefix}.joint"))?,
                a: ck.meta_parse(&format!("{prefix}.a"))?,
            }),
            "separate" => Ok(Estimator::Separate {
                height: ck.get_model(&format!("{prefix}.height"))?,
                age: ck.get_model(&format!("{prefix}.age"))?,
            }),
            other => Err(Error::format("checkpoint", format!("unknown estimator kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfilerModels {
    Shared(Estimator),
    PerGender { male: Estimator, female: Estimator },
}

/// Estimators plus the gender handling that routes utterances to them.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiler {
    pub gender_feature: bool,
    pub models: ProfilerModels,
}

impl Profiler {
    pub fn estimator_for(&self, gender: Gender) -> &Estimator {
        match &self.models {
            ProfilerModels::Shared(e) => e,
            ProfilerModels::PerGender { male, female } => match gender {
                Gender::Male => male,
                Gender::Female => female,
            },
        }
    }

    pub fn gender_handling(&self) -> GenderHandling {
        match (&self.models, self.gender_feature) {
            (ProfilerModels::PerGender { .. }, _) => GenderHandling::SeparateModels,
            (ProfilerModels::Shared(_), true) => GenderHandling::BinaryFeature,
            (ProfilerModels::Shared(_), false) => GenderHandling::None,
        }
    }

    pub fn technique(&self) -> Technique {
        self.estimator_for(Gender::Male).technique()
    }

    pub fn multitask(&self) -> bool {
        self.estimator_for(Gender::Male).multitask()
    }

    pub fn model_input(&self, utt: &UtteranceRecord) -> Matrix {
        utt.model_input(self.gender_feature)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta.insert("gender_feature".into(), self.gender_feature.to_string());
        match &self.models {
            ProfilerModels::Shared(e) => {
                ck.meta.insert("gender_handling".into(), "shared".into());
                e.put(&mut ck, "all");
            }
            ProfilerModels::PerGender { male, female } => {
                ck.meta.insert("gender_handling".into(), "per_gender".into());
                male.put(&mut ck, "male");
                female.put(&mut ck, "female");
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let gender_feature = ck.meta_parse("gender_feature")?;
        let models = match ck.meta_value("gender_handling")? {
            "shared" => ProfilerModels::Shared(Estimator::get(ck, "all")?),
            "per_gender" => ProfilerModels::PerGender {
                male: Estimator::get(ck, "male")?,
                female: Estimator::get(ck, "female")?,
            },
            other => return Err(Error::format("checkpoint", format!("unknown gender handling '{other}'"))),
        };
        Ok(Profiler { gender_feature, models })
    }
}

impl Regressor for Profiler {
    fn predict(&self, utt: &UtteranceRecord) -> Result<(f64, f64)> {
        self.estimator_for(utt.gender).predict(&self.model_input(utt))
    }
}

/// Per-utterance predictions in inference mode, in input order.
fn predict_inputs(params: &ModelParams, inputs: &[Matrix]) -> Result<Vec<(f64, f64)>> {
    inputs
        .par_iter()
        .map(|x| params.predict(x).map(|f| (f.height(), f.age())))
        .collect()
}

fn mse_pair(preds: &[(f64, f64)], set: &[UtteranceRecord]) -> (f64, f64) {
    let n = set.len() as f64;
    let (mut h, mut a) = (0.0, 0.0);
    for (p, u) in preds.iter().zip(set) {
        h += (p.0 - u.height_cm).powi(2);
        a += (p.1 - u.age_years).powi(2);
    }
    (h / n, a / n)
}

/// Sets each head to `v = mean(y) * mean(f) / |mean(f)|^2` so training starts
/// from the label mean instead of a dead or tiny ReLU output.
fn init_heads(params: &mut ModelParams, inputs: &[Matrix], set: &[UtteranceRecord]) -> Result<()> {
    let reprs: Vec<Vec<f64>> = inputs
        .par_iter()
        .map(|x| params.predict(x).map(|f| f.f))
        .collect::<Result<_>>()?;
    let mut mean_f = vec![0.0; params.config.repr_dim()];
    for f in &reprs {
        axpy(1.0 / reprs.len() as f64, f, &mut mean_f);
    }
    let nrm = dot(&mean_f, &mean_f);
    if nrm < 1e-12 {
        return Ok(());
    }
    let n = set.len() as f64;
    let mean_h = set.iter().map(|u| u.height_cm).sum::<f64>() / n;
    let mean_a = set.iter().map(|u| u.age_years).sum::<f64>() / n;
    params.v_height = mean_f.iter().map(|v| v * mean_h / nrm).collect();
    params.v_age = mean_f.iter().map(|v| v * mean_a / nrm).collect();
    Ok(())
}

fn validation_score(mse: (f64, f64), val: &[UtteranceRecord]) -> f64 {
    let h: Vec<f64> = val.iter().map(|u| u.height_cm).collect();
    let a: Vec<f64> = val.iter().map(|u| u.age_years).collect();
    let norm = |s: f64| if s > 0.0 { s } else { 1.0 };
    mse.0.sqrt() / norm(std_dev(&h)) + mse.1.sqrt() / norm(std_dev(&a))
}

fn check_inputs(train: &[UtteranceRecord], val: &[UtteranceRecord]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    check_disjoint_speakers(train, val)?;
    let f = train[0].features.n_feats();
    if let Some(u) = train.iter().chain(val).find(|u| u.features.n_feats() != f) {
        return Err(Error::invalid(format!(
            "utterance {} has {} features, expected {f}",
            u.id,
            u.features.n_feats()
        )));
    }
    if let Some(u) = val.iter().find(|u| u.speed != 1.0) {
        return Err(Error::invalid(format!("speed-perturbed copy {} in the validation set", u.id)));
    }
    Ok(())
}

/// Minibatch optimizer state for one model at a fixed task weight.
struct Trainer<'a> {
    cfg: &'a TrainConfig,
    weights: TaskWeights,
    train: &'a [UtteranceRecord],
    train_inputs: Vec<Matrix>,
    params: ModelParams,
    adam: Adam,
    order: Vec<usize>,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a TrainConfig, weights: TaskWeights, train: &'a [UtteranceRecord]) -> Result<Self> {
        let train_inputs: Vec<Matrix> = train.iter().map(|u| u.model_input(cfg.gender_feature)).collect();
        let model_cfg = cfg.model_config(train_inputs[0].cols());
        let mut init_rng = ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, STREAM_INIT]));
        let mut params = ModelParams::init(&model_cfg, &mut init_rng)?;
        init_heads(&mut params, &train_inputs, train)?;
        let adam = Adam::from_config(&params, cfg);
        Ok(Trainer {
            cfg,
            weights,
            train,
            train_inputs,
            params,
            adam,
            order: (0..train.len()).collect(),
        })
    }

    /// One shuffled pass over the training set; returns the mean batch loss.
    fn epoch(&mut self, epoch: usize) -> Result<f64> {
        let cfg = self.cfg;
        let train = self.train;
        let gender = |u: &UtteranceRecord| cfg.gender_feature.then_some(u.gender);
        let dropout = cfg.dropout_rates();
        let augment = !cfg.spec_augment.is_disabled();
        self.order
            .shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, STREAM_SHUFFLE, epoch as u64])));
        let mut loss_sum = 0.0;
        for (b, chunk) in self.order.chunks(cfg.batch_size).enumerate() {
            let augmented: Vec<Matrix> = if augment {
                chunk
                    .par_iter()
                    .map(|&i| {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, STREAM_AUGMENT, epoch as u64, i as u64]));
                        let fm: FeatureMatrix = spec_augment(&train[i].features, &cfg.spec_augment, &mut rng)?;
                        Ok(with_gender_column(&fm.values, gender(&train[i])))
                    })
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let items: Vec<BatchItem<'_>> = chunk
                .iter()
                .enumerate()
                .map(|(k, &i)| BatchItem {
                    input: if augment { &augmented[k] } else { &self.train_inputs[i] },
                    height: train[i].height_cm,
                    age: train[i].age_years,
                    seed: mix(&[cfg.seed, STREAM_DROPOUT, epoch as u64, i as u64]),
                })
                .collect();
            let mut bg = batch_gradient(&self.params, &items, self.weights, Mode::Train, dropout)?;
            if !bg.loss.is_finite() || !bg.grads.is_finite() {
                return Err(Error::Diverged { epoch, batch: b + 1 });
            }
            clip_global_norm(&mut bg.grads, cfg.clip_norm);
            self.adam.step(&mut self.params, &bg.grads);
            loss_sum += bg.loss * chunk.len() as f64;
        }
        Ok(loss_sum / train.len() as f64)
    }
}

/// Trains one model at task weight `weights` and restores its best epoch.
pub fn fit_weighted(
    cfg: &TrainConfig,
    weights: TaskWeights,
    train: &[UtteranceRecord],
    val: &[UtteranceRecord],
) -> Result<(ModelParams, RunHistory)> {
    cfg.validate()?;
    check_inputs(train, val)?;
    let val_inputs: Vec<Matrix> = val.iter().map(|u| u.model_input(cfg.gender_feature)).collect();
    let mut trainer = Trainer::new(cfg, weights, train)?;
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, usize, ModelParams, (f64, f64))> = None;
    for epoch in 1..=cfg.max_epochs {
        let train_loss = trainer.epoch(epoch)?;
        let mse = mse_pair(&predict_inputs(&trainer.params, &val_inputs)?, val);
        let val_loss = weights.combine(mse.0, mse.1);
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: train.len().div_ceil(cfg.batch_size),
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss_height: mse.0,
            val_loss_age: mse.1,
            val_loss,
        });
        match &best {
            Some((b, ..)) if val_loss >= *b => {}
            _ => best = Some((val_loss, epoch, trainer.params.clone(), mse)),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if epoch - best_epoch > cfg.patience {
            break;
        }
    }
    let (_, selected_epoch, params, mse) = best.expect("at least one epoch");
    Ok((
        params,
        RunHistory {
            a: weights.height,
            epochs,
            selected_epoch,
            val_score: validation_score(mse, val),
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverfitReport {
    pub params: ModelParams,
    /// Epochs run, including the one that reached the target.
    pub epochs: usize,
    /// Weighted training MSE in inference mode after each epoch.
    pub train_mse: Vec<f64>,
}

impl OverfitReport {
    pub fn final_mse(&self) -> f64 {
        *self.train_mse.last().expect("at least one epoch")
    }
}

/// Trains on `train` alone until its inference-mode weighted MSE drops
/// below `target` or `cfg.max_epochs` is reached.
pub fn fit_training_set(
    cfg: &TrainConfig,
    weights: TaskWeights,
    train: &[UtteranceRecord],
    target: f64,
) -> Result<OverfitReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set must be non-empty"));
    }
    let mut trainer = Trainer::new(cfg, weights, train)?;
    let mut train_mse = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        trainer.epoch(epoch)?;
        let mse = mse_pair(&predict_inputs(&trainer.params, &trainer.train_inputs)?, train);
        train_mse.push(weights.combine(mse.0, mse.1));
        if weights.combine(mse.0, mse.1) < target {
            break;
        }
    }
    Ok(OverfitReport {
        epochs: train_mse.len(),
        params: trainer.params,
        train_mse,
    })
}

/// Trains per the config: one joint model with `a` chosen from `a_grid` by
/// the normalized validation RMSE, or separate height and age models.
pub fn fit(cfg: &TrainConfig, train: &[UtteranceRecord], val: &[UtteranceRecord]) -> Result<(Estimator, TrainHistory)> {
    cfg.validate()?;
    if cfg.multitask {
        let mut runs = Vec::new();
        let mut best: Option<(f64, ModelParams, f64)> = None;
        for &a in &cfg.a_grid {
            let (params, run) = fit_weighted(cfg, TaskWeights::new(a)?, train, val)?;
            if best.as_ref().is_none_or(|(s, ..)| run.val_score < *s) {
                best = Some((run.val_score, params, a));
            }
            runs.push(run);
        }
        let (_, params, a) = best.expect("non-empty grid");
        Ok((Estimator::Joint { params, a }, TrainHistory { runs, selected_a: Some(a) }))
    } else {
        let (height, rh) = fit_weighted(cfg, TaskWeights::HEIGHT_ONLY, train, val)?;
        let (age, ra) = fit_weighted(cfg, TaskWeights::AGE_ONLY, train, val)?;
        Ok((
            Estimator::Separate { height, age },
            TrainHistory {
                runs: vec![rh, ra],
                selected_a: None,
            },
        ))
    }
}

/// Trains under a gender handling: one shared estimator (optionally with
/// the gender input column) or one estimator per gender.
pub fn fit_profiler(
    cfg: &TrainConfig,
    handling: GenderHandling,
    train: &[UtteranceRecord],
    val: &[UtteranceRecord],
) -> Result<(Profiler, Vec<(String, TrainHistory)>)> {
    match handling {
        GenderHandling::None | GenderHandling::BinaryFeature => {
            let cfg = TrainConfig {
                gender_feature: handling == GenderHandling::BinaryFeature,
                ..cfg.clone()
            };
            let (est, hist) = fit(&cfg, train, val)?;
            Ok((
                Profiler {
                    gender_feature: cfg.gender_feature,
                    models: ProfilerModels::Shared(est),
                },
                vec![("all".into(), hist)],
            ))
        }
        GenderHandling::SeparateModels => {
            let cfg = TrainConfig {
                gender_feature: false,
                ..cfg.clone()
            };
            let subset = |set: &[UtteranceRecord], g: Gender| -> Vec<UtteranceRecord> {
                set.iter().filter(|u| u.gender == g).cloned().collect()
            };
            let (male, hm) = fit(&cfg, &subset(train, Gender::Male), &subset(val, Gender::Male))?;
            let (female, hf) = fit(&cfg, &subset(train, Gender::Female), &subset(val, Gender::Female))?;
            Ok((
                Profiler {
                    gender_feature: false,
                    models: ProfilerModels::PerGender { male, female },
                },
                vec![("male".into(), hm), ("female".into(), hf)],
            ))
        }
    }
}
