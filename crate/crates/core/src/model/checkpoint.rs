//! Binary checkpoint codec.
//!
//! ```text
//! "WSIC" | version u32 | config_len u32 | config JSON
//!        | n_tensors u32 | { name_len u16 | name | dtype u8 | rank u8 | dims u32… | data }…
//! ```
//! All integers and floats are little-endian; data is row-major.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{ModelConfig, ModelParams};
use crate::error::{CheckpointError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"WSIC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Storage precision of tensor data. Parameters are always `f64` in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CheckpointDtype {
    F32,
    #[default]
    F64,
}

impl CheckpointDtype {
    fn tag(self) -> u8 {
        match self {
            CheckpointDtype::F32 => 0,
            CheckpointDtype::F64 => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, CheckpointError> {
        match tag {
            0 => Ok(CheckpointDtype::F32),
            1 => Ok(CheckpointDtype::F64),
            other => Err(CheckpointError::UnknownDtype(other)),
        }
    }

    fn width(self) -> usize {
        match self {
            CheckpointDtype::F32 => 4,
            CheckpointDtype::F64 => 8,
        }
    }
}

/// Serializes every tensor (including the position table) in canonical order.
pub fn encode_checkpoint(params: &ModelParams, dtype: CheckpointDtype) -> Vec<u8> {
    let config = serde_json::to_string(&params.config).expect("ModelConfig serializes");
    let tensors = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dtype.tag());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match dtype {
            CheckpointDtype::F32 => t.data.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            CheckpointDtype::F64 => t.data.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    out
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

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a checkpoint and checks it against the embedded config.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4).ok_or(CheckpointError::BadMagic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32().ok_or(CheckpointError::TruncatedHeader)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let cfg_len = r.u32().ok_or(CheckpointError::TruncatedHeader)? as usize;
    let cfg_bytes = r.take(cfg_len).ok_or(CheckpointError::TruncatedHeader)?;
    let cfg_text = core::str::from_utf8(cfg_bytes).map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    let config: ModelConfig = serde_json::from_str(cfg_text).map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    config
        .validate()
        .map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    let mut params = ModelParams::zeros(config).map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    let expected = params.tensors().len();

    let count = r.u32().ok_or(CheckpointError::TruncatedHeader)? as usize;
    if count != expected {
        return Err(CheckpointError::Inconsistent(format!(
            "{count} tensors stored, config implies {expected}"
        )));
    }
    let mut seen = BTreeSet::new();
    for i in 0..count {
        let unnamed = || CheckpointError::TruncatedTensor(format!("#{i}"));
        let name_len = r.u16().ok_or_else(unnamed)? as usize;
        let name_bytes = r.take(name_len).ok_or_else(unnamed)?;
        let name = String::from_utf8(name_bytes.to_vec())
            .map_err(|_| CheckpointError::Inconsistent(format!("tensor #{i} name is not UTF-8")))?;
        let truncated = || CheckpointError::TruncatedTensor(name.clone());
        let dtype = CheckpointDtype::from_tag(r.u8().ok_or_else(truncated)?)?;
        let rank = r.u8().ok_or_else(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32().ok_or_else(truncated)? as usize);
        }
        if !seen.insert(name.clone()) {
            return Err(CheckpointError::Inconsistent(format!("duplicate tensor {name}")));
        }
        let target = params
            .tensor_mut(&name)
            .ok_or_else(|| CheckpointError::Inconsistent(format!("unexpected tensor {name}")))?;
        if target.shape != shape {
            return Err(CheckpointError::Inconsistent(format!(
                "{name} has shape {shape:?}, config implies {:?}",
                target.shape
            )));
        }
        let raw = r.take(target.data.len() * dtype.width()).ok_or_else(truncated)?;
        match dtype {
            CheckpointDtype::F32 => {
                for (dst, b) in target.data.iter_mut().zip(raw.chunks_exact(4)) {
                    *dst = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
                }
            }
            CheckpointDtype::F64 => {
                for (dst, b) in target.data.iter_mut().zip(raw.chunks_exact(8)) {
                    *dst = f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
                }
            }
        }
    }
    let rest = bytes.len() - r.pos;
    if rest != 0 {
        return Err(CheckpointError::TrailingBytes(rest));
    }
    Ok(params)
}
