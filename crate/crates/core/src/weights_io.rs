//! Seeded initialization and the `FSBW` weight container.
//!
//! Layout: `b"FSBW"`, version byte `0x01`, manifest length as `u64` LE, the
//! JSON manifest, then every tensor as LE `f32`, row-major, in manifest order.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{check_weights, Init, ModelWeights, Weights};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FSBW";
pub const VERSION: u8 = 1;

/// Named weight tensors together with the configuration they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore {
    pub config: ModelConfig,
    pub weights: Weights<f32>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    /// Byte offset into the blob.
    offset: u64,
    /// Length in bytes.
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tensors: Vec<Entry>,
    crc32: u32,
}

/// Uniform `(-k, k)` weights with `k = 1/sqrt(fan_in)`, PReLU slopes 0.25,
/// norm gains 1 and shifts 0. Same seed, same bits.
pub fn init_random(config: &ModelConfig, seed: u64) -> Result<WeightStore> {
    let layout = ModelWeights::layout(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = layout.try_map(|spec| {
        let n = spec.numel();
        let data = match spec.init {
            Init::Uniform(k) => {
                let k = k as f32;
                (0..n).map(|_| rng.gen_range(-k..k)).collect()
            }
            Init::Const(v) => vec![v as f32; n],
        };
        Tensor::new(&spec.shape, data)
    })?;
    Ok(WeightStore { config: *config, weights })
}

impl WeightStore {
    pub fn new(config: ModelConfig, weights: Weights<f32>) -> Result<Self> {
        check_weights(&config, &weights)?;
        Ok(Self { config, weights })
    }

    pub fn num_params(&self) -> usize {
        self.weights.values().iter().map(|t| t.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blob = Vec::with_capacity(4 * self.num_params());
        let mut tensors = Vec::new();
        for (name, t) in self.weights.named() {
            let offset = blob.len() as u64;
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(Entry {
                name,
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
                len: blob.len() as u64 - offset,
            });
        }
        let manifest = Manifest { config: self.config, tensors, crc32: crc32fast::hash(&blob) };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(13 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: String| Error::Format(m);
        if bytes.len() < 13 || &bytes[..4] != MAGIC {
            return Err(fmt("not an FSBW file".into()));
        }
        if bytes[4] != VERSION {
            return Err(fmt(format!("unsupported version {}", bytes[4])));
        }
        let mlen = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let body = &bytes[13..];
        if mlen > body.len() {
            return Err(fmt("manifest extends past end of file".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen]).map_err(|e| fmt(format!("manifest: {e}")))?;
        let blob = &body[mlen..];
        let expected_len: u64 = manifest.tensors.iter().map(|e| e.len).sum();
        if (blob.len() as u64) < expected_len {
            return Err(fmt(format!("blob holds {} bytes, manifest needs {expected_len}", blob.len())));
        }
        let found = crc32fast::hash(blob);
        if found != manifest.crc32 {
            return Err(Error::Checksum { expected: manifest.crc32, found });
        }
        manifest.config.validate()?;
        let layout = ModelWeights::layout(&manifest.config)?;
        let expected = layout.named();
        if expected.len() != manifest.tensors.len() {
            return Err(Error::Shape(format!(
                "manifest lists {} tensors, configuration needs {}",
                manifest.tensors.len(),
                expected.len()
            )));
        }
        let mut values = Vec::with_capacity(expected.len());
        for ((name, spec), e) in expected.iter().zip(&manifest.tensors) {
            if *name != e.name || spec.shape != e.shape {
                return Err(Error::Shape(format!(
                    "expected {name} {:?}, manifest has {} {:?}",
                    spec.shape, e.name, e.shape
                )));
            }
            if e.dtype != "f32" || e.len != 4 * spec.numel() as u64 {
                return Err(fmt(format!("{name}: bad dtype or length")));
            }
            let start = e.offset as usize;
            let raw =
                blob.get(start..start + e.len as usize).ok_or_else(|| fmt(format!("{name}: range outside blob")))?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            values.push(Tensor::new(&e.shape, data)?);
        }
        Ok(Self { config: manifest.config, weights: layout.with_values(values)? })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads weights for `config`, failing if the stored tensors do not fit it.
    pub fn load_for(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Self> {
        let s = Self::load(path)?;
        if s.config != *config {
            check_weights(config, &s.weights)?;
        }
        Ok(Self { config: *config, ..s })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let c = ModelConfig::toy();
        assert_eq!(init_random(&c, 7).unwrap(), init_random(&c, 7).unwrap());
        assert_ne!(init_random(&c, 7).unwrap(), init_random(&c, 8).unwrap());
    }

    #[test]
    fn constants_and_bounds() {
        let s = init_random(&ModelConfig::toy(), 1).unwrap();
        let fb = &s.weights.stages[0].fb;
        assert_eq!(fb.prelu1.a.data(), &[0.25]);
        assert!(fb.norm1.g.data().iter().all(|&v| v == 1.0));
        assert!(fb.norm2.b.data().iter().all(|&v| v == 0.0));
        let k = 1.0 / (32f32).sqrt();
        assert!(fb.lstm.wh.data().iter().all(|v| v.abs() < k));
    }

    #[test]
    fn bytes_round_trip_and_truncation() {
        let s = init_random(&ModelConfig::toy(), 3).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(WeightStore::from_bytes(&bytes).unwrap(), s);
        assert!(WeightStore::from_bytes(&bytes[..bytes.len() - 5]).is_err());
        assert!(matches!(WeightStore::from_bytes(b"NOPE\x01"), Err(Error::Format(_))));
    }
}
