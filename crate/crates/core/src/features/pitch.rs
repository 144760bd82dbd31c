//! Normalized-autocorrelation pitch tracker producing three features per
//! frame: voicing confidence, log-f0 and delta log-f0.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioClip, FrameGrid};
use crate::numerics::Matrix;

pub const MIN_F0_HZ: f64 = 60.0;
pub const MAX_F0_HZ: f64 = 400.0;

/// Frames whose confidence falls below this are treated as unvoiced.
const VOICING_THRESHOLD: f64 = 0.5;
/// A shorter-lag peak wins if it reaches this fraction of the best peak (octave-error guard).
const SUBHARMONIC_RATIO: f64 = 0.9;

pub struct PitchTracker {
    sample_rate: u32,
    min_lag: usize,
    max_lag: usize,
    analysis_len: usize,
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchEstimate {
    pub f0_hz: f64,
    pub confidence: f64,
}

impl PitchTracker {
    pub fn new(sample_rate: u32) -> Self {
        let sr = sample_rate as f64;
        let min_lag = (sr / MAX_F0_HZ).floor().max(1.0) as usize;
        let max_lag = (sr / MIN_F0_HZ).ceil() as usize;
        // 40 ms at 16 kHz; at least two periods of the lowest pitch.
        let analysis_len = ((0.04 * sr).round() as usize).max(2 * max_lag + 1);
        let n_fft = (2 * analysis_len).next_power_of_two();
        let mut planner = FftPlanner::new();
        PitchTracker {
            sample_rate,
            min_lag,
            max_lag,
            analysis_len,
            n_fft,
            fft: planner.plan_fft_forward(n_fft),
            ifft: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn analysis_len(&self) -> usize {
        self.analysis_len
    }

    /// Pitch of a segment of `analysis_len` samples (shorter input is zero-padded).
    pub fn estimate(&self, segment: &[f64]) -> PitchEstimate {
        let len = self.analysis_len;
        let mut x = vec![0.0; len];
        let n = segment.len().min(len);
        x[..n].copy_from_slice(&segment[..n]);
        let mean = x.iter().sum::<f64>() / len as f64;
        for v in &mut x {
            *v -= mean;
        }
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let fallback = PitchEstimate {
            f0_hz: 0.0,
            confidence: 0.0,
        };
        if energy < 1e-10 * len as f64 {
            return fallback;
        }

        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(self.n_fft, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        for c in &mut buf {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        self.ifft.process(&mut buf);
        let scale = 1.0 / self.n_fft as f64;

        let mut prefix = vec![0.0; len + 1];
        for i in 0..len {
            prefix[i + 1] = prefix[i] + x[i] * x[i];
        }
        let max_lag = self.max_lag.min(len - 2);
        let nacf = |lag: usize| -> f64 {
            let head = prefix[len - lag];
            let tail = prefix[len] - prefix[lag];
            let denom = (head * tail).sqrt();
            if denom <= 0.0 {
                0.0
            } else {
                buf[lag].re * scale / denom
            }
        };
        let r: Vec<f64> = (0..=max_lag + 1).map(nacf).collect();

        let mut peaks = Vec::new();
        for lag in self.min_lag.max(1)..=max_lag {
            if r[lag] > 0.0 && r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1] {
                peaks.push(lag);
            }
        }
        let Some(best) = peaks
            .iter()
            .copied()
            .max_by(|&a, &b| r[a].total_cmp(&r[b]))
        else {
            return fallback;
        };
        let chosen = peaks
            .iter()
            .copied()
            .find(|&lag| r[lag] >= SUBHARMONIC_RATIO * r[best])
            .unwrap_or(best);

        let (a, b, c) = (r[chosen - 1], r[chosen], r[chosen + 1]);
        let curvature = a - 2.0 * b + c;
        let offset = if curvature < 0.0 {
            (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        let lag = chosen as f64 + offset;
        PitchEstimate {
            f0_hz: self.sample_rate as f64 / lag,
            confidence: b.clamp(0.0, 1.0),
        }
    }
}

/// Per-frame `(voicing confidence, log-f0, delta log-f0)` on the given grid.
///
/// Unvoiced frames take log-f0 linearly interpolated between the nearest
/// voiced frames (held flat at the ends). A clip with no voiced frame at all
/// uses the geometric centre of the pitch band.
pub fn pitch_features(clip: &AudioClip, grid: &FrameGrid) -> Matrix {
    let tracker = PitchTracker::new(clip.sample_rate);
    let half = tracker.analysis_len() as isize / 2;
    let n = clip.samples.len() as isize;
    let mut segment = vec![0.0; tracker.analysis_len()];

    let mut confidence = Vec::with_capacity(grid.n_frames);
    let mut log_f0: Vec<Option<f64>> = Vec::with_capacity(grid.n_frames);
    for t in 0..grid.n_frames {
        let start = grid.center(t).round() as isize - half;
        for (i, s) in segment.iter_mut().enumerate() {
            let idx = start + i as isize;
            *s = if idx >= 0 && idx < n {
                clip.samples[idx as usize]
            } else {
                0.0
            };
        }
        let est = tracker.estimate(&segment);
        confidence.push(est.confidence);
        log_f0.push(
            (est.confidence >= VOICING_THRESHOLD)
                .then(|| est.f0_hz.clamp(MIN_F0_HZ, MAX_F0_HZ).ln()),
        );
    }

    let filled = interpolate_gaps(&log_f0, (MIN_F0_HZ * MAX_F0_HZ).sqrt().ln());
    let mut out = Matrix::zeros(grid.n_frames, 3);
    for t in 0..grid.n_frames {
        let prev = filled[t.saturating_sub(1)];
        let next = filled[(t + 1).min(grid.n_frames - 1)];
        let row = out.row_mut(t);
        row[0] = confidence[t];
        row[1] = filled[t];
        row[2] = 0.5 * (next - prev);
    }
    out
}

fn interpolate_gaps(values: &[Option<f64>], default: f64) -> Vec<f64> {
    let known: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    if known.is_empty() {
        return vec![default; values.len()];
    }
    let mut out = Vec::with_capacity(values.len());
    let mut k = 0;
    for i in 0..values.len() {
        while k + 1 < known.len() && known[k + 1].0 <= i {
            k += 1;
        }
        let (i0, v0) = known[k];
        let v = if i <= i0 {
            v0
        } else if k + 1 < known.len() {
            let (i1, v1) = known[k + 1];
            v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
        } else {
            v0
        };
        out.push(v);
    }
    out
}
