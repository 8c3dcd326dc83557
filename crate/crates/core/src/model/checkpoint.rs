//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//! `STFLOWCK` | version u32 | config digest (32 bytes) | config JSON (u32 len + bytes)
//! | extra JSON (u32 len + bytes) | tensor count u32 | tensors | SHA-256 of everything before it.
//! Each tensor: kind u8 (0 param, 1 buffer) | name (u16 len + bytes) | dtype u8 | rank u8
//! | dims u32 each | raw data.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"STFLOWCK";
pub const VERSION: u32 = 1;

/// A loaded checkpoint: the model plus free-form metadata saved with it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub extra: serde_json::Value,
}

fn digest_bytes(config: &ModelConfig) -> Vec<u8> {
    let hex = config.digest();
    (0..32).map(|i| u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).expect("hex")).collect()
}

fn put_json(out: &mut Vec<u8>, v: &impl serde::Serialize) {
    let s = serde_json::to_vec(v).expect("serializable");
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(&s);
}

pub fn encode(model: &Model, extra: &serde_json::Value) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&digest_bytes(&model.config));
    put_json(&mut out, &model.config);
    put_json(&mut out, extra);
    let s = &model.store;
    out.extend_from_slice(&((s.params().len() + s.buffers().len()) as u32).to_le_bytes());
    for (kind, list) in [(0u8, s.params()), (1u8, s.buffers())] {
        for t in list {
            out.push(kind);
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(f32::DTYPE.code());
            out.push(t.value.rank() as u8);
            for &d in t.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.value.data() {
                v.write_le(&mut out);
            }
        }
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

pub fn save(model: &Model, extra: &serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, extra)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self) -> Result<T> {
        let n = self.u32()? as usize;
        serde_json::from_slice(self.take(n)?).map_err(|e| Error::Checkpoint(format!("bad embedded json: {}", e)))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Checkpoint("checksum mismatch (corrupt file)".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported (expected {})",
            version, VERSION
        )));
    }
    let digest = r.take(32)?.to_vec();
    let config: ModelConfig = r.json()?;
    if digest_bytes(&config) != digest {
        return Err(Error::Checkpoint("config digest does not match embedded config".into()));
    }
    let extra: serde_json::Value = r.json()?;
    let mut model = Model::build(&config)?;
    let count = r.u32()? as usize;
    let expected = model.store.params().len() + model.store.buffers().len();
    if count != expected {
        return Err(Error::Checkpoint(format!("{} tensors, model expects {}", count, expected)));
    }
    let mut seen = 0;
    for _ in 0..count {
        let kind = r.u8()?;
        let nlen = r.u16()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        let dtype = DType::from_code(r.u8()?).ok_or_else(|| Error::Checkpoint(format!("{}: unknown dtype", name)))?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * dtype.size())?;
        let data: Vec<f32> = match dtype {
            DType::F32 => raw.chunks_exact(4).map(f32::read_le).collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| f64::read_le(c) as f32).collect(),
        };
        let slot = match kind {
            0 => model.store.params_mut().find(|p| p.name == name),
            1 => model.store.buffers_mut().find(|p| p.name == name),
            _ => return Err(Error::Checkpoint(format!("{}: unknown tensor kind {}", name, kind))),
        }
        .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {}", name)))?;
        if slot.value.shape() != dims.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{}: shape {:?}, model expects {:?}",
                name,
                dims,
                slot.value.shape()
            )));
        }
        slot.value = Tensor::new(dims, data)?;
        seen += 1;
    }
    if seen != expected || r.pos != body.len() {
        return Err(Error::Checkpoint("trailing or missing tensor data".into()));
    }
    Ok(Checkpoint { model, extra })
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads a checkpoint and requires its architecture to match `config`.
pub fn load_for(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Checkpoint> {
    let ck = load(path)?;
    if ck.model.config.digest() != config.digest() {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained for config {} but {} was requested",
            &ck.model.config.digest()[..12],
            &config.digest()[..12]
        )));
    }
    Ok(ck)
}
