//! Binary tensor-record files, used for checkpoints and raw output dumps.
//!
//! Layout, all integers little-endian:
//! `"SFAE"`, version `u32`, config length `u32`, config text (`key = value`
//! lines), then records of name length `u32`, name bytes, rank `u32`, dims
//! `u32` each, and `f64` payload; finally a CRC-32 of every preceding byte.

use std::fs;
use std::path::Path;

use sfae_autodiff::Tensor;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::kv::KeyValues;

pub const MAGIC: &[u8; 4] = b"SFAE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: not an SFAE tensor file")]
    BadMagic,
    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("truncated file: needed {need} bytes at offset {offset}")]
    Truncated { offset: usize, need: usize },
    #[error("malformed file: {0}")]
    Malformed(String),
}

/// A config block plus named tensors, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub config: KeyValues,
    pub records: Vec<(String, Tensor)>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| CheckpointError::Malformed(format!("{what} {n} exceeds u32")).into())
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        let text = self.config.to_string();
        put_u32(&mut out, len_u32(text.len(), "config length")?);
        out.extend_from_slice(text.as_bytes());
        for (name, t) in &self.records {
            put_u32(&mut out, len_u32(name.len(), "name length")?);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, len_u32(t.rank(), "rank")?);
            for &d in t.shape() {
                put_u32(&mut out, len_u32(d, "dimension")?);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 {
            return Err(CheckpointError::Truncated {
                offset: 0,
                need: 4,
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let config_len = r.u32()? as usize;
        // header, config text and checksum must all be present
        if bytes.len() < r.pos + config_len + 4 {
            return Err(CheckpointError::Truncated {
                offset: bytes.len(),
                need: r.pos + config_len + 4 - bytes.len(),
            });
        }
        let body_end = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let r = &mut Reader {
            bytes: &bytes[..body_end],
            pos: r.pos,
        };
        let text = std::str::from_utf8(r.take(config_len)?)
            .map_err(|e| CheckpointError::Malformed(format!("config block is not UTF-8: {e}")))?;
        let config = KeyValues::parse(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let mut records = Vec::new();
        while r.pos < r.bytes.len() {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|e| CheckpointError::Malformed(format!("record name is not UTF-8: {e}")))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some())
                .ok_or_else(|| CheckpointError::Malformed(format!("record `{name}` is too large")))?;
            let payload = r.take(numel * 8)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| CheckpointError::Malformed(format!("record `{name}`: {e}")))?;
            records.push((name, t));
        }
        Ok(TensorFile { config, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(TensorFile::decode(&bytes)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                need: n,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
