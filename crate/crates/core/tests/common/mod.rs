//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xattn::dropout::Mode;
use xattn::model::{batch_gradient, batch_loss, BatchItem, DropoutRates, ModelConfig, ModelParams, TaskWeights, Technique};
use xattn::numerics::{dot, finite_diff_gradient, max_relative_error, Matrix};

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// 2 units, 5 features; 4 padded frames so unit attention sees padding.
pub fn toy_config(technique: Technique) -> ModelConfig {
    ModelConfig {
        technique,
        n_inputs: 5,
        n_units: 2,
        d_att: 3,
        n_frames_max: 4,
    }
}

pub const TOY_DROPOUT: DropoutRates = DropoutRates {
    input: 0.2,
    recurrent: 0.2,
    head: 0.2,
};

pub struct Toy {
    pub params: ModelParams,
    pub inputs: Vec<Matrix>,
    pub targets: Vec<(f64, f64)>,
}

impl Toy {
    pub fn new(technique: Technique, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(&toy_config(technique), &mut rng).unwrap();
        let inputs: Vec<Matrix> = (0..2)
            .map(|_| Matrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        // Keep the first utterance's heads on the active side of the ReLU.
        let f = params.predict(&inputs[0]).unwrap().f;
        for v in [&mut params.v_height, &mut params.v_age] {
            if dot(v, &f) < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        let targets = (0..2)
            .map(|_| (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)))
            .collect();
        Toy { params, inputs, targets }
    }

    pub fn items(&self) -> Vec<BatchItem<'_>> {
        self.inputs
            .iter()
            .zip(&self.targets)
            .enumerate()
            .map(|(i, (x, &(h, a)))| BatchItem {
                input: x,
                height: h,
                age: a,
                seed: 100 + i as u64,
            })
            .collect()
    }
}

/// Largest relative error between analytic and central-difference gradients,
/// per parameter tensor.
pub fn gradient_errors(toy: &Toy, weights: TaskWeights) -> Vec<(&'static str, f64)> {
    let items = toy.items();
    let analytic = batch_gradient(&toy.params, &items, weights, Mode::Train, TOY_DROPOUT)
        .unwrap()
        .grads;
    let mut probe = toy.params.clone();
    let numeric = finite_diff_gradient(
        |theta| {
            probe.assign_flat(theta).unwrap();
            batch_loss(&probe, &items, weights, Mode::Train, TOY_DROPOUT).unwrap()
        },
        &toy.params.flatten(),
        FD_EPS,
    )
    .unwrap();
    let mut out = Vec::new();
    let mut off = 0;
    for (name, _, g) in analytic.tensors() {
        out.push((name, max_relative_error(g, &numeric[off..off + g.len()])));
        off += g.len();
    }
    out
}

/// `(technique, weights, label)` for the six configurations; single-task
/// alternates between the height and age heads by seed.
pub fn configurations(seed: u64) -> Vec<(Technique, TaskWeights, &'static str)> {
    let single = if seed % 2 == 0 { TaskWeights::HEIGHT_ONLY } else { TaskWeights::AGE_ONLY };
    let a = 0.1 + 0.8 * ((seed * 7919) % 1000) as f64 / 1000.0;
    let multi = TaskWeights::new(a).unwrap();
    Technique::ALL
        .into_iter()
        .flat_map(|t| [(t, single, "single"), (t, multi, "multi")])
        .collect()
}

/// Gradient of the height-only loss, assembled item by item without the
/// multi-task weighting.
pub fn height_only_gradient(toy: &Toy, mode: Mode, dropout: DropoutRates) -> ModelParams {
    per_target_gradient(toy, mode, dropout, true)
}

pub fn age_only_gradient(toy: &Toy, mode: Mode, dropout: DropoutRates) -> ModelParams {
    per_target_gradient(toy, mode, dropout, false)
}

fn per_target_gradient(toy: &Toy, mode: Mode, dropout: DropoutRates, height: bool) -> ModelParams {
    let items = toy.items();
    let scale = 1.0 / items.len() as f64;
    let mut total = toy.params.zeros_like();
    for item in &items {
        let mut rng = ChaCha8Rng::seed_from_u64(item.seed);
        let fwd = toy.params.forward(item.input, mode, dropout, &mut rng).unwrap();
        let mut g = toy.params.zeros_like();
        if height {
            toy.params.backward(&fwd, 2.0 * (fwd.height() - item.height) * scale, 0.0, &mut g).unwrap();
        } else {
            toy.params.backward(&fwd, 0.0, 2.0 * (fwd.age() - item.age) * scale, &mut g).unwrap();
        }
        total.add_scaled(1.0, &g);
    }
    total
}

/// Synthesizes every utterance of `spec` in memory and normalizes the raw
/// features with statistics pooled over all of them.
pub fn synthetic_records(spec: &xattn::datagen::SyntheticSpec) -> Vec<xattn::data::UtteranceRecord> {
    use xattn::datagen::{speakers, synthesize, utterance_seed};
    use xattn::features::{extract_features, CmvnStats, FeatureConfig};
    let spk = speakers(spec).unwrap();
    let mut raw = Vec::new();
    for (s, p) in spk.iter().enumerate() {
        for u in 0..spec.utterances_per_speaker {
            let (clip, align) = synthesize(spec, p, utterance_seed(spec, s, u)).unwrap();
            raw.push((p.clone(), u, extract_features(&clip, &FeatureConfig::default()).unwrap(), align));
        }
    }
    let stats = CmvnStats::from_matrices(raw.iter().map(|r| &r.2.values)).unwrap();
    raw.into_iter()
        .map(|(p, u, fm, align)| xattn::data::UtteranceRecord {
            id: format!("{}_{u:02}", p.id),
            speaker_id: p.id.clone(),
            gender: p.gender,
            height_cm: p.height_cm,
            age_years: p.age_years,
            features: stats.apply(&fm).unwrap(),
            speed: 1.0,
            alignment: Some(align),
        })
        .collect()
}
