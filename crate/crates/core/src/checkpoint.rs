//! Binary parameter checkpoints.
//!
//! Layout (little endian): the magic `DCPLCKPT`, a `u32` version, a
//! length-prefixed JSON block holding the model and task configs, a `u32`
//! tensor count, then per tensor its name, rank, extents and `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::TaskConfig;
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 8] = b"DCPLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    task: TaskConfig,
}

fn bad(message: impl Into<String>) -> Error {
    Error::Checkpoint(message.into())
}

pub fn to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&Meta {
        model: params.config,
        task: params.task.clone(),
    })
    .map_err(|e| bad(e.to_string()))?;
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(params.store.len() as u32).to_le_bytes());
    for (_, name, t) in params.store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("truncated checkpoint"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(8).map_err(|_| bad("not a checkpoint file"))? != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = c.u64()? as usize;
    let meta: Meta = serde_json::from_slice(c.take(meta_len)?).map_err(|e| bad(format!("config block: {e}")))?;
    let mut params = ModelParams::new(meta.model, meta.task, 0).map_err(|e| bad(format!("config block: {e}")))?;
    let count = c.u32()? as usize;
    if count != params.store.len() {
        return Err(bad(format!(
            "checkpoint holds {count} tensors, the configured model has {}",
            params.store.len()
        )));
    }
    let ids: Vec<_> = params.store.ids().collect();
    for id in ids {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?).map_err(|_| bad("tensor name is not UTF-8"))?;
        if name != params.store.name(id) {
            return Err(bad(format!("expected tensor {:?}, found {name:?}", params.store.name(id))));
        }
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let tensor = params.store.get_mut(id);
        if shape != tensor.shape() {
            return Err(bad(format!("tensor {name:?} has shape {shape:?}, expected {:?}", tensor.shape())));
        }
        let raw = c.take(tensor.len() * 8)?;
        for (dst, chunk) in tensor.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if c.at != bytes.len() {
        return Err(bad("trailing bytes after the last tensor"));
    }
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = to_bytes(params)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coord::CoordinateConfig;

    fn model(seed: u64) -> ModelParams {
        let cfg = ModelConfig {
            feature_dim: 4,
            dim: 3,
            hidden: 5,
            coordinate: CoordinateConfig {
                channels: 2,
                ..CoordinateConfig::default()
            },
            ..ModelConfig::default()
        };
        ModelParams::new(cfg, TaskConfig::volleyball(), seed).unwrap()
    }

    #[test]
    fn round_trip_is_value_exact() {
        let mut p = model(3);
        let gid = p.gates.unwrap().group;
        p.store.get_mut(gid).data_mut()[0] = 0.1 + 0.2;
        let bytes = to_bytes(&p).unwrap();
        let q = from_bytes(&bytes).unwrap();
        for ((_, na, a), (_, nb, b)) in p.store.iter().zip(q.store.iter()) {
            assert_eq!(na, nb);
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(to_bytes(&q).unwrap(), bytes);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = to_bytes(&model(1)).unwrap();
        assert!(matches!(from_bytes(b"garbage"), Err(Error::Checkpoint(_))));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
