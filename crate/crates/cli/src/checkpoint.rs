//! Binary model checkpoints.
//!
//! Layout: the 8-byte magic `STBLCKPT`, a little-endian u32 format
//! version, a u64 length and that many bytes of JSON metadata, a u64
//! parameter count followed by the parameters as little-endian f64, and
//! finally the SHA-256 digest of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stable_core::potentials::{Architecture, NeuralPotential};
use stable_core::trainer::{PretrainProgress, TrainerState};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"STBLCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrained,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub architecture: Architecture,
    pub stage: Stage,
    /// Pretraining progress, for resuming.
    pub pretrain: Option<PretrainProgress>,
    /// Training-loop state at the last phase boundary, for resuming.
    pub trainer: Option<TrainerState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Metadata,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: &NeuralPotential, stage: Stage) -> Self {
        Checkpoint {
            meta: Metadata {
                architecture: model.architecture().clone(),
                stage,
                pretrain: None,
                trainer: None,
            },
            params: model.params().to_vec(),
        }
    }

    pub fn model(&self) -> CliResult<NeuralPotential> {
        Ok(NeuralPotential::from_params(
            self.meta.architecture.clone(),
            self.params.clone(),
        )?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(8 + 4 + 8 + meta.len() + 8 + 8 * self.params.len() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> CliResult<Self> {
        let bad = |m: &str| CliError::format(path, m.to_string());
        if bytes.len() < MAGIC.len() + 4 + 8 + 8 + DIGEST_LEN {
            return Err(bad("file too short for a checkpoint"));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = u32::from_le_bytes(r.take(4).ok_or_else(|| bad("truncated header"))?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let meta_bytes = r.take(meta_len).ok_or_else(|| bad("truncated metadata"))?;
        let meta: Metadata = serde_json::from_slice(meta_bytes).map_err(|e| bad(&format!("metadata: {e}")))?;
        let n = r.u64().ok_or_else(|| bad("truncated parameter count"))? as usize;
        let raw = r
            .take(n.checked_mul(8).ok_or_else(|| bad("parameter count overflow"))?)
            .ok_or_else(|| bad("truncated parameters"))?;
        if r.pos != body.len() {
            return Err(bad("trailing bytes after parameters"));
        }
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.encode()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let model = NeuralPotential::new(Architecture::new(vec!["C".into(), "H".into()]), 5).unwrap();
        Checkpoint::new(&model, Stage::Pretrained)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::decode(&c.encode(), Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert!(back
            .params
            .iter()
            .zip(&c.params)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().encode();
        let k = bytes.len() / 2;
        bytes[k] ^= 1;
        let err = Checkpoint::decode(&bytes, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("checksum"));
    }

    #[test]
    fn other_versions_are_rejected() {
        let mut bytes = sample().encode();
        bytes[8] = 2;
        let n = bytes.len() - DIGEST_LEN;
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        let err = Checkpoint::decode(&bytes, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
