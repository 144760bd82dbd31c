//! SpecAugment-style strand masking on normalized feature matrices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Redraws allowed while searching for a mask set inside the target range.
const MAX_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecAugmentPolicy {
    pub n_time_masks: usize,
    pub max_time_mask_frames: usize,
    pub n_feat_masks: usize,
    pub max_feat_mask_bins: usize,
    /// Accepted range for the fraction of masked cells.
    pub target_mask_fraction: [f64; 2],
}

impl Default for SpecAugmentPolicy {
    fn default() -> Self {
        SpecAugmentPolicy {
            n_time_masks: 2,
            max_time_mask_frames: 40,
            n_feat_masks: 2,
            max_feat_mask_bins: 8,
            target_mask_fraction: [0.10, 0.12],
        }
    }
}

impl SpecAugmentPolicy {
    pub fn disabled() -> Self {
        SpecAugmentPolicy {
            n_time_masks: 0,
            max_time_mask_frames: 0,
            n_feat_masks: 0,
            max_feat_mask_bins: 0,
            target_mask_fraction: [0.0, 0.0],
        }
    }

    pub fn is_disabled(&self) -> bool {
        (self.n_time_masks == 0 || self.max_time_mask_frames == 0)
            && (self.n_feat_masks == 0 || self.max_feat_mask_bins == 0)
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.target_mask_fraction;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!(
                "target mask fraction range [{lo}, {hi}] must satisfy 0 <= low <= high <= 1"
            )));
        }
        Ok(())
    }
}

/// Which rows (frames) and columns (feature bins) were zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecAugmentMask {
    pub frames: Vec<bool>,
    pub bins: Vec<bool>,
}

impl SpecAugmentMask {
    pub fn is_masked(&self, t: usize, f: usize) -> bool {
        self.frames[t] || self.bins[f]
    }

    pub fn masked_fraction(&self) -> f64 {
        let ft = fraction(&self.frames);
        let ff = fraction(&self.bins);
        1.0 - (1.0 - ft) * (1.0 - ff)
    }
}

fn fraction(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        0.0
    } else {
        flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64
    }
}

fn draw_strands<R: Rng + ?Sized>(len: usize, n: usize, max_width: usize, rng: &mut R) -> Vec<bool> {
    let mut flags = vec![false; len];
    for _ in 0..n {
        let width = rng.random_range(0..=max_width.min(len));
        let start = rng.random_range(0..=len - width);
        flags[start..start + width].iter_mut().for_each(|f| *f = true);
    }
    flags
}

fn distance_to(range: [f64; 2], x: f64) -> f64 {
    if x < range[0] {
        range[0] - x
    } else if x > range[1] {
        x - range[1]
    } else {
        0.0
    }
}

pub fn spec_augment<R: Rng + ?Sized>(
    fm: &FeatureMatrix,
    policy: &SpecAugmentPolicy,
    rng: &mut R,
) -> Result<FeatureMatrix> {
    spec_augment_with_mask(fm, policy, rng).map(|(out, _)| out)
}

/// Zeroes random time and feature strands.
///
/// Mask sets are redrawn until the masked-cell fraction lands inside the
/// policy's target range; if no draw does, the closest one is kept. A policy
/// without masks returns the input unchanged. Extents larger than the matrix
/// are clipped to it.
pub fn spec_augment_with_mask<R: Rng + ?Sized>(
    fm: &FeatureMatrix,
    policy: &SpecAugmentPolicy,
    rng: &mut R,
) -> Result<(FeatureMatrix, SpecAugmentMask)> {
    policy.validate()?;
    let (t, f) = (fm.n_frames(), fm.n_feats());
    if t == 0 || f == 0 {
        return Err(Error::invalid("spec_augment on an empty matrix"));
    }
    let none = SpecAugmentMask {
        frames: vec![false; t],
        bins: vec![false; f],
    };
    if policy.is_disabled() {
        return Ok((fm.clone(), none));
    }

    let mut best: Option<(f64, SpecAugmentMask)> = None;
    for _ in 0..MAX_DRAWS {
        let mask = SpecAugmentMask {
            frames: draw_strands(t, policy.n_time_masks, policy.max_time_mask_frames, rng),
            bins: draw_strands(f, policy.n_feat_masks, policy.max_feat_mask_bins, rng),
        };
        let d = distance_to(policy.target_mask_fraction, mask.masked_fraction());
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, mask));
        }
        if d == 0.0 {
            break;
        }
    }
    let (_, mask) = best.expect("at least one draw");

    let mut out = fm.clone();
    for r in 0..t {
        let row = out.values.row_mut(r);
        if mask.frames[r] {
            row.fill(0.0);
        } else {
            for (v, &m) in row.iter_mut().zip(&mask.bins) {
                if m {
                    *v = 0.0;
                }
            }
        }
    }
    Ok((out, mask))
}
