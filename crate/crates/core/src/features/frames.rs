use super::AudioClip;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Frame layout of a clip: `n_frames` windows of `window_len` samples every `hop_len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGrid {
    pub n_frames: usize,
    pub window_len: usize,
    pub hop_len: usize,
    pub sample_rate: u32,
}

impl FrameGrid {
    pub fn new(n_samples: usize, sample_rate: u32, window_ms: f64, hop_ms: f64) -> Result<Self> {
        if !(window_ms > 0.0 && hop_ms > 0.0) {
            return Err(Error::invalid("window and hop must be positive"));
        }
        let window_len = ms_to_samples(window_ms, sample_rate);
        let hop_len = ms_to_samples(hop_ms, sample_rate).max(1);
        if window_len == 0 || n_samples < window_len {
            return Err(Error::TooShort(format!(
                "{n_samples} samples is shorter than one {window_len}-sample window"
            )));
        }
        Ok(FrameGrid {
            n_frames: 1 + (n_samples - window_len) / hop_len,
            window_len,
            hop_len,
            sample_rate,
        })
    }

    /// Sample index of the center of frame `t`.
    pub fn center(&self, t: usize) -> f64 {
        (t * self.hop_len) as f64 + self.window_len as f64 / 2.0
    }
}

fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round() as usize
}

pub fn hann_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
        .collect()
}

/// Slices a clip into Hann-windowed frames, one per row.
pub fn frame_signal(clip: &AudioClip, window_ms: f64, hop_ms: f64) -> Result<(FrameGrid, Matrix)> {
    let grid = FrameGrid::new(clip.samples.len(), clip.sample_rate, window_ms, hop_ms)?;
    let window = hann_window(grid.window_len);
    let mut frames = Matrix::zeros(grid.n_frames, grid.window_len);
    for t in 0..grid.n_frames {
        let start = t * grid.hop_len;
        let src = &clip.samples[start..start + grid.window_len];
        for ((dst, s), w) in frames.row_mut(t).iter_mut().zip(src).zip(&window) {
            *dst = s * w;
        }
    }
    Ok((grid, frames))
}
