//! Checkpoint container.
//!
//! Layout (all integers little-endian u32, all reals little-endian f64):
//!
//! ```text
//! "XAMP" | version | meta_len | meta (UTF-8 "key=value" lines)
//! | n_tensors | { name_len | name | ndim | dims... | data... } * n_tensors
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams, Technique};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XAMP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", "unexpected end of file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::format("checkpoint", "string is not UTF-8"))
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut buf, CHECKPOINT_VERSION as usize);
        let meta: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_u32(&mut buf, meta.len());
        buf.extend_from_slice(meta.as_bytes());
        put_u32(&mut buf, self.tensors.len());
        for t in &self.tensors {
            put_u32(&mut buf, t.name.len());
            buf.extend_from_slice(t.name.as_bytes());
            put_u32(&mut buf, t.shape.len());
            for &d in &t.shape {
                put_u32(&mut buf, d);
            }
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::format("checkpoint", "missing XAMP header"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let mut meta = BTreeMap::new();
        for line in r.string()?.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("checkpoint", format!("bad metadata line '{line}'")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let data = r
                .take(count * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn meta_value(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format("checkpoint", format!("missing metadata key '{key}'")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta_value(key)?;
        raw.parse()
            .map_err(|_| Error::format("checkpoint", format!("bad value '{raw}' for '{key}'")))
    }

    /// Stores the model's config under `prefix.` keys and its tensors under `prefix/` names.
    pub fn put_model(&mut self, prefix: &str, params: &ModelParams) {
        let c = &params.config;
        for (k, v) in [
            ("technique", c.technique.to_string()),
            ("n_inputs", c.n_inputs.to_string()),
            ("n_units", c.n_units.to_string()),
            ("d_att", c.d_att.to_string()),
            ("n_frames_max", c.n_frames_max.to_string()),
        ] {
            self.meta.insert(format!("{prefix}.{k}"), v);
        }
        for (name, shape, data) in params.tensors() {
            self.tensors.push(NamedTensor {
                name: format!("{prefix}/{name}"),
                shape,
                data: data.to_vec(),
            });
        }
    }

    pub fn has_model(&self, prefix: &str) -> bool {
        self.meta.contains_key(&format!("{prefix}.technique"))
    }

    pub fn get_model(&self, prefix: &str) -> Result<ModelParams> {
        let config = ModelConfig {
            technique: self.meta_parse::<Technique>(&format!("{prefix}.technique"))?,
            n_inputs: self.meta_parse(&format!("{prefix}.n_inputs"))?,
            n_units: self.meta_parse(&format!("{prefix}.n_units"))?,
            d_att: self.meta_parse(&format!("{prefix}.d_att"))?,
            n_frames_max: self.meta_parse(&format!("{prefix}.n_frames_max"))?,
        };
        config.validate()?;
        let mut params = ModelParams::zeros(&config);
        let expected: Vec<(String, Vec<usize>)> = params
            .tensors()
            .into_iter()
            .map(|(n, s, _)| (format!("{prefix}/{n}"), s))
            .collect();
        for ((name, shape), (_, dst)) in expected.iter().zip(params.tensors_mut()) {
            let t = self
                .tensor(name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor '{name}'")))?;
            if &t.shape != shape {
                return Err(Error::format(
                    "checkpoint",
                    format!("tensor '{name}' has shape {:?}, expected {shape:?}", t.shape),
                ));
            }
            dst.copy_from_slice(&t.data);
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn model_roundtrip_through_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ModelConfig {
            technique: Technique::Cross,
            n_inputs: 4,
            n_units: 3,
            d_att: 2,
            n_frames_max: 5,
        };
        let p = ModelParams::init(&cfg, &mut rng).unwrap();
        let mut ck = Checkpoint::default();
        ck.meta.insert("seed".into(), "17".into());
        ck.put_model("joint", &p);
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get_model("joint").unwrap(), p);
        assert_eq!(back.meta_parse::<u64>("seed").unwrap(), 17);
        assert!(back.get_model("age").is_err());
    }

    #[test]
    fn header_bytes() {
        let bytes = Checkpoint::default().encode();
        assert_eq!(&bytes[..4], b"XAMP");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        assert!(Checkpoint::decode(b"XAMQ").is_err());
        let mut bytes = Checkpoint::default().encode();
        bytes.push(0);
        assert!(Checkpoint::decode(&bytes).is_err());
        let mut ck = Checkpoint::default();
        ck.tensors.push(NamedTensor {
            name: "x".into(),
            shape: vec![2],
            data: vec![1.0, 2.0],
        });
        let bytes = ck.encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
