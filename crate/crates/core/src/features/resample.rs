use std::f64::consts::PI;

use super::AudioClip;
use crate::error::{Error, Result};

/// Zero crossings of the interpolation kernel on each side, at full bandwidth.
const KERNEL_ZEROS: f64 = 16.0;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited reading of `x` at fractional positions `j * step`, `j < out_len`.
///
/// `cutoff` is the lowpass edge as a fraction of the input Nyquist frequency.
/// The kernel is a Hann-windowed sinc.
fn resample_by_step(x: &[f64], step: f64, out_len: usize, cutoff: f64) -> Vec<f64> {
    let half_width = KERNEL_ZEROS / cutoff;
    let n = x.len() as isize;
    (0..out_len)
        .map(|j| {
            let pos = j as f64 * step;
            let lo = (pos - half_width).ceil() as isize;
            let hi = (pos + half_width).floor() as isize;
            let mut acc = 0.0;
            for i in lo.max(0)..=hi.min(n - 1) {
                let d = pos - i as f64;
                let w = 0.5 + 0.5 * (PI * d / half_width).cos();
                acc += x[i as usize] * cutoff * sinc(cutoff * d) * w;
            }
            acc
        })
        .collect()
}

/// Plays the clip `factor` times faster at the same sample rate, shifting
/// tempo and pitch together. Output length is `round(N / factor)`.
pub fn speed_perturb(clip: &AudioClip, factor: f64) -> Result<AudioClip> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::invalid(format!(
            "speed factor must be positive, got {factor}"
        )));
    }
    let out_len = (clip.samples.len() as f64 / factor).round() as usize;
    let samples = resample_by_step(&clip.samples, factor, out_len, (1.0 / factor).min(1.0));
    Ok(AudioClip {
        samples,
        sample_rate: clip.sample_rate,
    })
}

/// Changes the sample rate while preserving duration and pitch.
pub fn resample_to(clip: &AudioClip, sample_rate: u32) -> Result<AudioClip> {
    if sample_rate == 0 {
        return Err(Error::invalid("target sample rate must be positive"));
    }
    if sample_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = clip.sample_rate as f64 / sample_rate as f64;
    let out_len = (clip.samples.len() as f64 / ratio).round() as usize;
    let samples = resample_by_step(&clip.samples, ratio, out_len, (1.0 / ratio).min(1.0));
    Ok(AudioClip {
        samples,
        sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn tone(freq: f64, n: usize, sr: u32) -> AudioClip {
        let samples = (0..n)
            .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / sr as f64).sin())
            .collect();
        AudioClip::new(samples, sr).unwrap()
    }

    /// Frequency of the largest FFT bin, refined by parabolic interpolation.
    fn dominant_frequency(clip: &AudioClip) -> f64 {
        let n = clip.samples.len().next_power_of_two() * 2;
        let mut buf: Vec<Complex<f64>> = clip
            .samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (clip.samples.len() - 1) as f64).cos();
                Complex::new(x * w, 0.0)
            })
            .collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let mag: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
        let k = (1..mag.len() - 1).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
        let (a, b, c) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
        let off = 0.5 * (a - c) / (a - 2.0 * b + c);
        (k as f64 + off) * clip.sample_rate as f64 / n as f64
    }

    #[test]
    fn unit_factor_is_identity() {
        let clip = tone(440.0, 4000, 16000);
        let out = speed_perturb(&clip, 1.0).unwrap();
        assert_eq!(out.samples.len(), clip.samples.len());
        let dev = out
            .samples
            .iter()
            .zip(&clip.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-6, "max deviation {dev}");
    }

    #[test]
    fn output_lengths() {
        let clip = AudioClip::new(vec![0.0; 16000], 16000).unwrap();
        assert_eq!(speed_perturb(&clip, 0.9).unwrap().samples.len(), 17778);
        assert_eq!(speed_perturb(&clip, 1.1).unwrap().samples.len(), 14545);
    }

    #[test]
    fn faster_playback_raises_pitch() {
        let clip = tone(440.0, 16000, 16000);
        let out = speed_perturb(&clip, 1.1).unwrap();
        let f = dominant_frequency(&out);
        assert!((f - 484.0).abs() < 2.0, "dominant {f}");
    }

    #[test]
    fn bad_factor() {
        let clip = tone(440.0, 100, 16000);
        assert!(speed_perturb(&clip, 0.0).is_err());
        assert!(speed_perturb(&clip, -1.0).is_err());
        assert!(speed_perturb(&clip, f64::NAN).is_err());
    }

    #[test]
    fn reciprocal_factors_restore_length() {
        for n in [16000usize, 12345, 40001] {
            let clip = AudioClip::new(vec![0.0; n], 16000).unwrap();
            let slow = speed_perturb(&clip, 0.9).unwrap();
            let back = speed_perturb(&slow, 1.0 / 0.9).unwrap();
            assert!((back.samples.len() as i64 - n as i64).abs() <= 2);
        }
    }

    #[test]
    fn rate_conversion_keeps_pitch() {
        let clip = tone(300.0, 22050, 22050);
        let out = resample_to(&clip, 16000).unwrap();
        assert_eq!(out.samples.len(), 16000);
        assert!((dominant_frequency(&out) - 300.0).abs() < 1.0);
    }
}
