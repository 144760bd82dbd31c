use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Where normalization statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmvnMode {
    /// Each utterance is standardized with its own statistics.
    #[default]
    Utterance,
    /// Statistics pooled over the training split.
    Corpus,
}

/// Per-dimension mean and standard deviation. A zero `std` marks a
/// constant dimension, which normalizes to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CmvnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn is_constant(var: f64, mean: f64) -> bool {
    var <= 1e-20 * mean.abs().max(1.0).powi(2)
}

impl CmvnStats {
    /// Population statistics over the stacked rows of every matrix.
    pub fn from_matrices<'a>(mats: impl IntoIterator<Item = &'a Matrix>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut shift: Vec<f64> = Vec::new();
        for m in mats {
            if sum.is_empty() {
                sum = vec![0.0; m.cols()];
                sq = vec![0.0; m.cols()];
                // Shifted sums keep the variance accurate for large offsets.
                shift = if m.rows() > 0 { m.row(0).to_vec() } else { vec![0.0; m.cols()] };
            } else if m.cols() != sum.len() {
                return Err(Error::invalid("matrices differ in feature dimension"));
            }
            for r in 0..m.rows() {
                for (c, &v) in m.row(r).iter().enumerate() {
                    let d = v - shift[c];
                    sum[c] += d;
                    sq[c] += d * d;
                }
            }
            count += m.rows();
        }
        if count < 2 {
            return Err(Error::TooShort(format!(
                "CMVN needs at least 2 frames, got {count}"
            )));
        }
        let n = count as f64;
        let mut mean = Vec::with_capacity(sum.len());
        let mut std = Vec::with_capacity(sum.len());
        for c in 0..sum.len() {
            let m = sum[c] / n;
            let var = (sq[c] / n - m * m).max(0.0);
            let full_mean = m + shift[c];
            mean.push(full_mean);
            std.push(if is_constant(var, full_mean) { 0.0 } else { var.sqrt() });
        }
        Ok(CmvnStats { mean, std })
    }

    pub fn apply(&self, fm: &FeatureMatrix) -> Result<FeatureMatrix> {
        if fm.n_feats() != self.mean.len() {
            return Err(Error::invalid(format!(
                "CMVN stats have {} dims, features have {}",
                self.mean.len(),
                fm.n_feats()
            )));
        }
        let mut out = fm.clone();
        for t in 0..out.n_frames() {
            for ((v, &m), &s) in out.values.row_mut(t).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = if s > 0.0 { (*v - m) / s } else { 0.0 };
            }
        }
        Ok(out)
    }
}

/// Per-utterance mean/variance normalization (population variance).
pub fn cmvn(fm: &FeatureMatrix) -> Result<FeatureMatrix> {
    CmvnStats::from_matrices([&fm.values])?.apply(fm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(Matrix::new(values.len(), 1, values.to_vec()).unwrap())
    }

    #[test]
    fn hand_computed_column() {
        let out = cmvn(&column(&[1.0, 2.0, 3.0])).unwrap();
        let want = [-(1.5f64).sqrt(), 0.0, 1.5f64.sqrt()];
        for (g, w) in out.values.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_becomes_zero() {
        let out = cmvn(&column(&[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(out.values.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn standardized_column_is_unchanged() {
        let s = 1.5f64.sqrt();
        let fm = column(&[-s, 0.0, s]);
        let out = cmvn(&fm).unwrap();
        for (a, b) in out.values.data().iter().zip(fm.values.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_frame_is_too_short() {
        assert!(matches!(cmvn(&column(&[1.0])), Err(Error::TooShort(_))));
    }

    #[test]
    fn corpus_stats_pool_all_frames() {
        let a = Matrix::new(2, 1, vec![0.0, 2.0]).unwrap();
        let b = Matrix::new(2, 1, vec![4.0, 6.0]).unwrap();
        let stats = CmvnStats::from_matrices([&a, &b]).unwrap();
        assert!((stats.mean[0] - 3.0).abs() < 1e-12);
        assert!((stats.std[0] - 5f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn normalized_moments_and_idempotence(
            rows in 2usize..40,
            data in proptest::collection::vec(-1e3f64..1e3, 160),
            offset in -1e4f64..1e4,
        ) {
            let cols = 4;
            let vals: Vec<f64> = data.iter().take(rows * cols).map(|v| v + offset).collect();
            prop_assume!(vals.len() == rows * cols);
            let fm = FeatureMatrix::new(Matrix::new(rows, cols, vals).unwrap());
            let once = cmvn(&fm).unwrap();
            for c in 0..cols {
                let col = once.values.column(c);
                let mean = col.iter().sum::<f64>() / rows as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!(var == 0.0 || (var - 1.0).abs() < 1e-6);
            }
            let twice = cmvn(&once).unwrap();
            for (a, b) in once.values.data().iter().zip(twice.values.data()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
