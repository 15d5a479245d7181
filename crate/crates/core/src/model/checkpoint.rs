//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "SPADCKPT"
//! version  u32 LE
//! hlen     u32 LE   length of the JSON header
//! header   hlen bytes of UTF-8 JSON (CheckpointHeader)
//! nparams  u64 LE
//! params   nparams * f32 LE
//! has_opt  u8 (0 or 1)
//! [step u64 LE, m nparams * f32 LE, v nparams * f32 LE]   when has_opt = 1
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::SpadConfig;
use crate::error::{Result, SpadError};
use crate::manifest::EpochRecord;

use super::adam::AdamState;
use super::unet::PredictorSpec;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_HEADER: usize = 16 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub predictor: PredictorSpec,
    pub config_hash: String,
    pub config: SpadConfig,
    pub parameterization: String,
    pub epochs_completed: usize,
    pub seed: u64,
    pub corpus_hash: String,
    pub epoch_log: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f32>,
    pub optimizer: Option<AdamState>,
}

fn bad(msg: impl Into<String>) -> SpadError {
    SpadError::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad("truncated checkpoint"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n.checked_mul(4).ok_or_else(|| bad("parameter count overflow"))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(32 + header.len() + self.params.len() * 12);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&s.step.to_le_bytes());
                for v in s.m.iter().chain(&s.v) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let hlen = r.u32()? as usize;
        if hlen > MAX_HEADER {
            return Err(bad("header too large"));
        }
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| bad(format!("header: {e}")))?;
        let n = usize::try_from(r.u64()?).map_err(|_| bad("parameter count overflow"))?;
        let expected = crate::model::count_parameters(&header.predictor)?;
        if n != expected {
            return Err(bad(format!(
                "{n} parameters stored, predictor spec needs {expected}"
            )));
        }
        let params = r.f32s(n)?;
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let m = r.f32s(n)?;
                let v = r.f32s(n)?;
                Some(AdamState { step, m, v })
            }
            other => return Err(bad(format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after checkpoint"));
        }
        Ok(Checkpoint {
            header,
            params,
            optimizer,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| SpadError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| SpadError::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Refuses the checkpoint unless it was trained with exactly `config`.
    pub fn verify_config(&self, config: &SpadConfig) -> Result<()> {
        let found = config.hash();
        if found != self.header.config_hash {
            return Err(SpadError::HashMismatch {
                expected: self.header.config_hash.clone(),
                found,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = SpadConfig::default();
        let mut predictor = PredictorSpec::from_config(&config);
        predictor.base_channels = 2;
        let n = crate::model::count_parameters(&predictor).unwrap();
        Checkpoint {
            header: CheckpointHeader {
                predictor,
                config_hash: config.hash(),
                config,
                parameterization: crate::model::PARAMETERIZATION.into(),
                epochs_completed: 2,
                seed: 7,
                corpus_hash: "ab".into(),
                epoch_log: vec![],
            },
            params: (0..n).map(|i| i as f32 * 0.5).collect(),
            optimizer: Some(AdamState {
                step: 3,
                m: vec![0.25; n],
                v: vec![0.125; n],
            }),
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let c = sample();
        assert_eq!(Checkpoint::decode(&c.encode()).unwrap(), c);
        let mut plain = c.clone();
        plain.optimizer = None;
        assert_eq!(Checkpoint::decode(&plain.encode()).unwrap(), plain);
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::decode(&magic).is_err());
        assert!(Checkpoint::decode(&[]).is_err());
    }

    #[test]
    fn config_hash_guard() {
        let c = sample();
        c.verify_config(&c.header.config).unwrap();
        let mut other = c.header.config.clone();
        other.beta = 0.3;
        assert!(matches!(c.verify_config(&other), Err(SpadError::HashMismatch { .. })));
    }
}
