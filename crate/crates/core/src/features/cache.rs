//! Feature cache files: `XAF1`, `T` and `F` as little-endian u32, then
//! `T * F` little-endian f64 values in row-major order.

use std::fs;
use std::path::Path;

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CACHE_MAGIC: &[u8; 4] = b"XAF1";
const HEADER_LEN: usize = 12;

pub fn encode_feature_cache(fm: &FeatureMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * fm.values.data().len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(fm.n_frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(fm.n_feats() as u32).to_le_bytes());
    for v in fm.values.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_feature_cache(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != CACHE_MAGIC {
        return Err(Error::format("feature cache", "missing XAF1 header"));
    }
    let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != t * f * 8 {
        return Err(Error::format(
            "feature cache",
            format!("{t}x{f} header but {} payload bytes", body.len()),
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureMatrix::new(Matrix::new(t, f, data)?))
}

pub fn write_feature_cache(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    fs::write(path, encode_feature_cache(fm)).map_err(|e| Error::io(path, e))
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_cache(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let fm = FeatureMatrix::new(Matrix::new(2, 1, vec![1.0, -0.5]).unwrap());
        let bytes = encode_feature_cache(&fm);
        assert_eq!(&bytes[..4], b"XAF1");
        assert_eq!(&bytes[4..12], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[12..20], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 12 + 16);
    }

    #[test]
    fn rejects_truncated_payload() {
        let fm = FeatureMatrix::new(Matrix::zeros(3, 2));
        let mut bytes = encode_feature_cache(&fm);
        bytes.pop();
        assert!(decode_feature_cache(&bytes).is_err());
        assert!(decode_feature_cache(b"XAF0\0\0\0\0\0\0\0\0").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(t in 0usize..20, f in 1usize..9, seed in any::<u64>()) {
            let fm = FeatureMatrix::new(Matrix::from_fn(t, f, |r, c| {
                f64::from_bits(seed.wrapping_mul(r as u64 * 31 + c as u64 + 1) >> 2)
            }));
            let back = decode_feature_cache(&encode_feature_cache(&fm)).unwrap();
            prop_assert_eq!(back.values.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            fm.values.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
