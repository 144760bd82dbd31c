//! Synthetic corpus with TIMIT-like layout and a planted label signal.
//!
//! Utterances alternate consonant and vowel segments between leading and
//! trailing silence. Vowels are harmonic tones with `f0 = 300 - height_cm`
//! and a spectral tilt that grows linearly with age; consonants are
//! band-limited noise whose statistics do not depend on the speaker.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::analysis::{PhoneAlignment, PhoneSegment, SILENCE};
use crate::data::{Gender, Manifest, ManifestRow, Split};
use crate::error::{Error, Result};
use crate::features::{write_wav, AudioClip};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub height_range_cm: [f64; 2],
    pub age_range_yr: [f64; 2],
    pub male_fraction: f64,
    pub duration_range_s: [f64; 2],
    pub sample_rate: u32,
    /// Speaker fractions for train and validation; the rest is test.
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_speakers: 60,
            utterances_per_speaker: 10,
            height_range_cm: [145.0, 204.0],
            age_range_yr: [21.0, 76.0],
            male_fraction: 2.0 / 3.0,
            duration_range_s: [1.0, 6.0],
            sample_rate: 16_000,
            train_fraction: 0.7,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.height_range_cm) || !ordered(self.age_range_yr) || !ordered(self.duration_range_s) {
            return Err(Error::invalid("ranges must be finite and ordered"));
        }
        if self.height_range_cm[0] <= 0.0 || self.height_range_cm[1] >= 300.0 - crate::features::MIN_F0_HZ {
            return Err(Error::invalid("heights must keep 300 - height inside the pitch range"));
        }
        if self.duration_range_s[0] < 0.3 {
            return Err(Error::invalid("utterances must last at least 0.3 s"));
        }
        for (name, v) in [
            ("male_fraction", self.male_fraction),
            ("train_fraction", self.train_fraction),
            ("val_fraction", self.val_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.train_fraction + self.val_fraction > 1.0 {
            return Err(Error::invalid("train_fraction + val_fraction exceeds 1"));
        }
        if self.sample_rate < 16_000 {
            return Err(Error::invalid("sample rate must be at least 16 kHz"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    pub gender: Gender,
    pub height_cm: f64,
    pub age_years: f64,
    pub split: Split,
}

impl SpeakerProfile {
    pub fn f0_hz(&self) -> f64 {
        300.0 - self.height_cm
    }

    /// Harmonic roll-off in dB per octave.
    pub fn tilt_db_per_octave(&self) -> f64 {
        3.0 + 0.15 * (self.age_years - 21.0)
    }
}

/// Vowels with their first two formants (Hz).
const VOWELS: [(&str, f64, f64); 10] = [
    ("iy", 270.0, 2290.0),
    ("ih", 390.0, 1990.0),
    ("eh", 530.0, 1840.0),
    ("ae", 660.0, 1720.0),
    ("aa", 730.0, 1090.0),
    ("ah", 520.0, 1190.0),
    ("ao", 570.0, 840.0),
    ("uw", 300.0, 870.0),
    ("er", 490.0, 1350.0),
    ("ow", 500.0, 900.0),
];

/// Consonants: label, noise band (Hz), RMS level, and whether a closure
/// precedes the burst.
const CONSONANTS: [(&str, f64, f64, f64, bool); 10] = [
    ("p", 400.0, 1500.0, 0.04, true),
    ("t", 3000.0, 6500.0, 0.04, true),
    ("k", 1500.0, 3000.0, 0.04, true),
    ("b", 300.0, 1200.0, 0.025, true),
    ("d", 2500.0, 5000.0, 0.025, true),
    ("g", 1200.0, 2500.0, 0.025, true),
    ("s", 4000.0, 7800.0, 0.03, false),
    ("sh", 2000.0, 5000.0, 0.03, false),
    ("f", 1000.0, 7500.0, 0.012, false),
    ("hh", 500.0, 4000.0, 0.01, false),
];

const VOWEL_RMS: f64 = 0.1;
const SILENCE_RMS: f64 = 0.001;

/// Speakers with labels and split assignment, stratified by gender.
pub fn speakers(spec: &SyntheticSpec) -> Result<Vec<SpeakerProfile>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, u64::MAX, 0));
    let n_male = (spec.male_fraction * spec.n_speakers as f64).round() as usize;
    let mut genders: Vec<Gender> = (0..spec.n_speakers)
        .map(|i| if i < n_male { Gender::Male } else { Gender::Female })
        .collect();
    genders.shuffle(&mut rng);
    let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.random_range(r[0]..r[1]) };
    let mut out: Vec<SpeakerProfile> = genders
        .iter()
        .enumerate()
        .map(|(i, &gender)| SpeakerProfile {
            id: format!("spk{i:03}"),
            gender,
            height_cm: (uniform(&mut rng, spec.height_range_cm) * 10.0).round() / 10.0,
            age_years: uniform(&mut rng, spec.age_range_yr).round(),
            split: Split::Test,
        })
        .collect();
    for g in Gender::ALL {
        let idx: Vec<usize> = (0..out.len()).filter(|&i| out[i].gender == g).collect();
        let n = idx.len() as f64;
        let n_train = (spec.train_fraction * n).round() as usize;
        let n_val = ((spec.val_fraction * n).round() as usize).min(idx.len() - n_train.min(idx.len()));
        for (k, &i) in idx.iter().enumerate() {
            out[i].split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of utterance `u` of speaker `s`.
pub fn utterance_seed(spec: &SyntheticSpec, s: usize, u: usize) -> u64 {
    mix(spec.seed, s as u64, u as u64)
}

fn rms_normalize(x: &mut [f64], rms: f64) {
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if cur > 0.0 {
        x.iter_mut().for_each(|v| *v *= rms / cur);
    }
}

/// Raised-cosine fade at both ends.
fn taper(x: &mut [f64], len: usize) {
    let len = len.min(x.len() / 2);
    let n = x.len();
    for i in 0..len {
        let w = 0.5 - 0.5 * (PI * i as f64 / len as f64).cos();
        x[i] *= w;
        x[n - 1 - i] *= w;
    }
}

fn white_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// White noise restricted to `[lo, hi]` Hz by zeroing FFT bins.
fn band_noise(rng: &mut ChaCha8Rng, n: usize, sr: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = white_noise(rng, n).into_iter().map(|v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * sr / n as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

fn vowel(rng: &mut ChaCha8Rng, n: usize, sr: f64, spk: &SpeakerProfile, f1: f64, f2: f64) -> Vec<f64> {
    let f0 = spk.f0_hz();
    let tilt = spk.tilt_db_per_octave();
    let mut out = vec![0.0; n];
    let mut k = 1;
    while k as f64 * f0 < 0.45 * sr.min(16_000.0) {
        let f = k as f64 * f0;
        let formant = 1.0 + 3.0 * (-((f - f1) / 120.0).powi(2)).exp() + 2.0 * (-((f - f2) / 180.0).powi(2)).exp();
        let amp = 10f64.powf(-tilt * (k as f64).log2() / 20.0) * formant;
        let phase = rng.random_range(0.0..2.0 * PI);
        let w = 2.0 * PI * f / sr;
        for (i, o) in out.iter_mut().enumerate() {
            *o += amp * (w * i as f64 + phase).sin();
        }
        k += 1;
    }
    rms_normalize(&mut out, VOWEL_RMS);
    out
}

fn consonant(rng: &mut ChaCha8Rng, n: usize, sr: f64, band: (f64, f64), rms: f64, closure: bool) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let start = if closure { n / 3 } else { 0 };
    let mut burst = band_noise(rng, n - start, sr, band.0, band.1);
    rms_normalize(&mut burst, rms);
    taper(&mut burst, (0.005 * sr) as usize);
    out[start..].copy_from_slice(&burst);
    let mut floor = white_noise(rng, start);
    rms_normalize(&mut floor, SILENCE_RMS);
    out[..start].copy_from_slice(&floor);
    out
}

fn silence(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut out = white_noise(rng, n);
    rms_normalize(&mut out, SILENCE_RMS);
    out
}

/// One utterance for `spk`. Everything except the vowel waveforms depends
/// only on `seed`, so two speakers rendered with the same seed share their
/// phone sequence, durations, and consonant noise.
pub fn synthesize(spec: &SyntheticSpec, spk: &SpeakerProfile, seed: u64) -> Result<(AudioClip, PhoneAlignment)> {
    spec.validate()?;
    let sr = spec.sample_rate as f64;
    let mut plan = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = spec.duration_range_s;
    let u: f64 = plan.random_range(0.0..1.0);
    let duration = lo + (hi - lo) * u * u;
    let total = (duration * sr).round() as usize;
    let edge = |rng: &mut ChaCha8Rng| (rng.random_range(0.05..0.15) * sr) as usize;
    let (lead, trail) = (edge(&mut plan), edge(&mut plan));

    // Segment plan: (label, length, kind).
    enum Kind {
        Silence,
        Vowel(f64, f64),
        Consonant((f64, f64), f64, bool),
    }
    let mut segs: Vec<(&str, usize, Kind)> = vec![(SILENCE, lead, Kind::Silence)];
    let mut used = lead;
    let body_end = total.saturating_sub(trail);
    let mut want_vowel = plan.random_bool(0.5);
    while used < body_end {
        let len = if want_vowel {
            (plan.random_range(0.08..0.22) * sr) as usize
        } else {
            (plan.random_range(0.04..0.12) * sr) as usize
        };
        let len = len.min(body_end - used).max(1);
        let seg = if want_vowel {
            let &(label, f1, f2) = VOWELS.choose(&mut plan).expect("non-empty");
            (label, len, Kind::Vowel(f1, f2))
        } else {
            let &(label, blo, bhi, rms, closure) = CONSONANTS.choose(&mut plan).expect("non-empty");
            (label, len, Kind::Consonant((blo, bhi), rms, closure))
        };
        segs.push(seg);
        used += len;
        want_vowel = !want_vowel;
    }
    segs.push((SILENCE, total.saturating_sub(used).max(1), Kind::Silence));

    let mut samples = Vec::with_capacity(total);
    let mut entries = Vec::with_capacity(segs.len());
    for (i, (label, len, kind)) in segs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 1, i as u64));
        let mut wave = match kind {
            Kind::Silence => silence(&mut rng, *len),
            Kind::Vowel(f1, f2) => vowel(&mut rng, *len, sr, spk, *f1, *f2),
            Kind::Consonant(band, rms, closure) => consonant(&mut rng, *len, sr, *band, *rms, *closure),
        };
        if let Kind::Vowel(..) = kind {
            taper(&mut wave, (0.01 * sr) as usize);
        }
        let start = samples.len() as u64;
        samples.extend_from_slice(&wave);
        entries.push(PhoneSegment {
            start,
            end: samples.len() as u64,
            label: label.to_string(),
        });
    }
    Ok((AudioClip::new(samples, spec.sample_rate)?, PhoneAlignment::new(entries, spec.sample_rate)?))
}

/// Writes `wav/`, `align/`, and `manifest.tsv` under `out_dir` and returns
/// the manifest.
pub fn generate(spec: &SyntheticSpec, out_dir: &Path) -> Result<Manifest> {
    let spks = speakers(spec)?;
    for sub in ["wav", "align"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let jobs: Vec<(usize, usize)> = (0..spks.len())
        .flat_map(|s| (0..spec.utterances_per_speaker).map(move |u| (s, u)))
        .collect();
    let rows: Vec<ManifestRow> = jobs
        .par_iter()
        .map(|&(s, u)| {
            let spk = &spks[s];
            let (clip, align) = synthesize(spec, spk, utterance_seed(spec, s, u))?;
            let wav = format!("wav/{}_{u:02}.wav", spk.id);
            let phn = format!("align/{}_{u:02}.phn", spk.id);
            write_wav(&out_dir.join(&wav), &clip)?;
            align.write(&out_dir.join(&phn))?;
            Ok(ManifestRow {
                path: wav,
                speaker_id: spk.id.clone(),
                gender: spk.gender,
                height_cm: spk.height_cm,
                age_years: spk.age_years,
                split: spk.split,
                alignment_path: Some(phn),
            })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        rows,
    };
    manifest.write(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
