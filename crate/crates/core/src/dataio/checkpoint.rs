//! Binary container: magic `SCRA`, `u32` version, `u32` entry count, then
//! per entry a `u32` name length, the UTF-8 name, a `u32` rank, `rank` `u32`
//! dimensions and the values as `f32`. Every integer and float is little
//! endian.

use std::collections::BTreeMap;
use std::path::Path;

use super::{DataError, Result};
use crate::autodiff::Tensor;
use crate::decoder::DecoderParams;
use crate::optimizer::LatentBank;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SCRA";
pub const CHECKPOINT_VERSION: u32 = 1;

const LATENT_PREFIX: &str = "latent/";
const SLOPE_KEY: &str = "config/leaky_slope";
const EPS_KEY: &str = "config/bn_eps";
const MOMENTUM_KEY: &str = "config/bn_momentum";

pub fn encode_tensors(tensors: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            DataError::CorruptCheckpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(DataError::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(DataError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = r.u32("entry count")?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| DataError::CorruptCheckpoint("name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| DataError::CorruptCheckpoint(format!("{name}: size overflows")))?;
        let raw = r.take(n, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| DataError::CorruptCheckpoint(format!("{name}: {e}")))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(DataError::CorruptCheckpoint(format!("duplicate entry {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(DataError::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

/// Decoder parameters plus optional per-pair latents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DecoderParams,
    pub latents: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn new(params: DecoderParams, bank: Option<&LatentBank>) -> Self {
        let latents = bank
            .map(|b| b.iter().map(|l| (l.pair_id.clone(), l.values.clone())).collect())
            .unwrap_or_default();
        Self { params, latents }
    }

    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut t = self.params.named_tensors();
        let c = self.params.config();
        t.insert(SLOPE_KEY.into(), Tensor::scalar(c.leaky_slope));
        t.insert(EPS_KEY.into(), Tensor::scalar(c.bn_eps));
        t.insert(MOMENTUM_KEY.into(), Tensor::scalar(c.bn_momentum));
        for (id, z) in &self.latents {
            t.insert(format!("{LATENT_PREFIX}{id}"), Tensor::vector(z.clone()));
        }
        t
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_tensors(&self.to_tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let tensors = decode_tensors(bytes)?;
        // Settings are stored as f32; the shortest decimal of that f32 recovers
        // values such as 0.01 exactly.
        let setting = |key: &str| -> Result<f64> {
            let t = tensors
                .get(key)
                .filter(|t| t.len() == 1)
                .ok_or_else(|| DataError::CorruptCheckpoint(format!("missing {key}")))?;
            Ok(format!("{}", t.data()[0] as f32).parse().expect("float text parses"))
        };
        let bad = |e: crate::decoder::DecoderError| DataError::CorruptCheckpoint(e.to_string());
        let mut params = DecoderParams::from_named_tensors(&tensors, setting(SLOPE_KEY)?).map_err(bad)?;
        params
            .set_scalar_settings(setting(SLOPE_KEY)?, setting(EPS_KEY)?, setting(MOMENTUM_KEY)?)
            .map_err(bad)?;
        let dim = params.config().latent_dim;
        let mut latents = BTreeMap::new();
        for (k, t) in &tensors {
            if let Some(id) = k.strip_prefix(LATENT_PREFIX) {
                if t.shape() != [dim] {
                    return Err(DataError::CorruptCheckpoint(format!(
                        "latent {id} has shape {:?}, decoder expects [{dim}]",
                        t.shape()
                    )));
                }
                latents.insert(id.to_string(), t.data().to_vec());
            } else if k.contains('/') && !k.starts_with("config/") {
                return Err(DataError::CorruptCheckpoint(format!("unknown entry {k}")));
            }
        }
        Ok(Self { params, latents })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, params: &DecoderParams, bank: Option<&LatentBank>) -> Result<()> {
    Checkpoint::new(params.clone(), bank).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{init_params, DecoderConfig};

    fn small() -> DecoderParams {
        let cfg = DecoderConfig {
            latent_dim: 4,
            stage1_widths: vec![8, 6],
            rotation_head: vec![5, 3],
            translation_head: vec![5, 3],
            ..DecoderConfig::default()
        };
        init_params(&cfg, 2).unwrap()
    }

    #[test]
    fn round_trip_bit_equal() {
        let mut latents = BTreeMap::new();
        latents.insert("a".to_string(), vec![0.5, -1.25, 2.0, 0.0]);
        let ck = Checkpoint {
            params: small(),
            latents,
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_and_version() {
        let bytes = Checkpoint::new(small(), None).to_bytes();
        for cut in [0, 3, 7, 11, 20, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(DataError::CorruptCheckpoint(_))
            ));
        }
        let mut v = bytes.clone();
        v[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&v),
            Err(DataError::VersionMismatch { found: 2, expected: 1 })
        ));
        let mut m = bytes;
        m[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&m), Err(DataError::CorruptCheckpoint(_))));
    }
}
