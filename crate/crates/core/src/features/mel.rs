use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Log energies are floored at `ln(1e-10)`.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

struct Band {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Log-mel filterbank over power spectra, with a cached FFT plan.
pub struct LogMel {
    fft: Arc<dyn Fft<f64>>,
    n_fft: usize,
    bands: Vec<Band>,
}

impl LogMel {
    /// Triangular HTK-mel bands spanning 0 Hz to Nyquist; FFT size is the
    /// next power of two at or above `window_len`.
    pub fn new(sample_rate: u32, window_len: usize, n_mels: usize) -> Self {
        let n_fft = window_len.max(1).next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_max * i as f64 / (n_mels + 1) as f64)
            .collect();
        let n_bins = n_fft / 2 + 1;
        let bin_mel: Vec<f64> = (0..n_bins)
            .map(|k| hz_to_mel(k as f64 * sample_rate as f64 / n_fft as f64))
            .collect();
        let bands = (0..n_mels)
            .map(|j| {
                let (lo, mid, hi) = (edges[j], edges[j + 1], edges[j + 2]);
                let mut first_bin = None;
                let mut weights = Vec::new();
                for (k, &m) in bin_mel.iter().enumerate() {
                    let w = if m > lo && m <= mid {
                        (m - lo) / (mid - lo)
                    } else if m > mid && m < hi {
                        (hi - m) / (hi - mid)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first_bin.get_or_insert(k);
                        weights.push(w);
                    } else if first_bin.is_some() {
                        break;
                    }
                }
                Band {
                    first_bin: first_bin.unwrap_or(0),
                    weights,
                }
            })
            .collect();
        LogMel { fft, n_fft, bands }
    }

    pub fn n_mels(&self) -> usize {
        self.bands.len()
    }

    /// One-sided power spectrum `|X_k|^2`, `k = 0..=n_fft/2`.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .take(self.n_fft)
            .map(|&x| Complex::new(x, 0.0))
            .collect();
        buf.resize(self.n_fft, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        buf[..self.n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn apply(&self, frame: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_mels()];
        self.apply_into(frame, &mut out);
        out
    }

    pub fn apply_into(&self, frame: &[f64], out: &mut [f64]) {
        let power = self.power_spectrum(frame);
        for (o, band) in out.iter_mut().zip(&self.bands) {
            let e: f64 = band
                .weights
                .iter()
                .zip(&power[band.first_bin..])
                .map(|(w, p)| w * p)
                .sum();
            *o = e.max(LOG_FLOOR).ln();
        }
    }
}

/// Log mel-band energies of one already-windowed frame.
pub fn logmel_energies(frame: &[f64], sample_rate: u32, n_mels: usize) -> Vec<f64> {
    LogMel::new(sample_rate, frame.len(), n_mels).apply(frame)
}
