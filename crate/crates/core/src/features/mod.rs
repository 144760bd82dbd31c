//! Acoustic front end: framing, log-mel filterbank, pitch, CMVN, and the two
//! training-time augmentations (speed perturbation and SpecAugment).

mod augment;
mod cache;
mod cmvn;
mod frames;
mod mel;
mod pitch;
mod resample;
mod wav;

pub use augment::{spec_augment, spec_augment_with_mask, SpecAugmentMask, SpecAugmentPolicy};
pub use cache::{read_feature_cache, write_feature_cache, CACHE_MAGIC};
pub use cmvn::{cmvn, CmvnMode, CmvnStats};
pub use frames::{frame_signal, hann_window, FrameGrid};
pub use mel::{hz_to_mel, logmel_energies, mel_to_hz, LogMel, LOG_FLOOR};
pub use pitch::{pitch_features, PitchTracker, MAX_F0_HZ, MIN_F0_HZ};
pub use resample::{resample_to, speed_perturb};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const TARGET_SAMPLE_RATE: u32 = 16_000;
pub const N_MELS: usize = 80;
pub const N_PITCH: usize = 3;
/// Filterbank plus pitch dimensions per frame.
pub const N_FEATURES: usize = N_MELS + N_PITCH;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// A `T x F` matrix of per-frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Matrix,
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl FeatureMatrix {
    pub fn new(values: Matrix) -> Self {
        FeatureMatrix {
            values,
            window_ms: 25.0,
            hop_ms: 10.0,
        }
    }

    #[inline]
    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn n_feats(&self) -> usize {
        self.values.cols()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window_ms: 25.0,
            hop_ms: 10.0,
            n_mels: N_MELS,
        }
    }
}

/// Computes the raw (un-normalized) `T x (n_mels + 3)` feature matrix.
///
/// Audio at any rate is first resampled to 16 kHz. Normalization is a
/// separate step so that corpus-level statistics can be used when wanted.
pub fn extract_features(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    let resampled;
    let clip = if clip.sample_rate != TARGET_SAMPLE_RATE {
        resampled = resample_to(clip, TARGET_SAMPLE_RATE)?;
        &resampled
    } else {
        clip
    };
    let (grid, frames) = frame_signal(clip, cfg.window_ms, cfg.hop_ms)?;
    let logmel = LogMel::new(clip.sample_rate, grid.window_len, cfg.n_mels);
    let pitch = pitch_features(clip, &grid);
    let n_feats = cfg.n_mels + N_PITCH;
    let mut values = Matrix::zeros(grid.n_frames, n_feats);
    for t in 0..grid.n_frames {
        let row = values.row_mut(t);
        logmel.apply_into(frames.row(t), &mut row[..cfg.n_mels]);
        row[cfg.n_mels..].copy_from_slice(pitch.row(t));
    }
    Ok(FeatureMatrix {
        values,
        window_ms: cfg.window_ms,
        hop_ms: cfg.hop_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn extraction_shape_and_finiteness() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..16000)
            .map(|i| {
                let t = i as f64 / 16000.0;
                0.3 * (2.0 * std::f64::consts::PI * 150.0 * t).sin() + 0.01 * rng.random_range(-1.0..1.0)
            })
            .collect();
        let clip = AudioClip::new(samples, 16000).unwrap();
        let fm = extract_features(&clip, &FeatureConfig::default()).unwrap();
        assert_eq!(fm.n_frames(), 98);
        assert_eq!(fm.n_feats(), N_FEATURES);
        assert!(fm.values.is_finite());
    }

    #[test]
    fn extraction_of_silence_is_finite() {
        let clip = AudioClip::new(vec![0.0; 8000], 16000).unwrap();
        let fm = extract_features(&clip, &FeatureConfig::default()).unwrap();
        assert!(fm.values.is_finite());
    }

    #[test]
    fn other_sample_rates_are_resampled() {
        let clip = AudioClip::new(vec![0.1; 8000], 8000).unwrap();
        let fm = extract_features(&clip, &FeatureConfig::default()).unwrap();
        assert_eq!(fm.n_frames(), 98);
    }
}
