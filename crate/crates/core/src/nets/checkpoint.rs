//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "PANOCKPT"
//! version u32
//! meta    u32 length + UTF-8 JSON (network configs, step, epoch)
//! count   u32
//! count × { u32 name length, name, u32 rank, rank × u32 dims, numel × f32 }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_critic, build_generator, Critic, CriticConfig, Generator, GeneratorConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PANOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub step: u64,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub(crate) fn from_f64(name: String, shape: Vec<usize>, data: &[f64]) -> Self {
        Self {
            name,
            shape,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn capture(generator: &Generator, critic: &Critic, step: u64, epoch: u64) -> Self {
        let mut arrays = Vec::new();
        generator.export_arrays(&mut arrays);
        critic.export_arrays(&mut arrays);
        Self {
            meta: CheckpointMeta {
                generator: generator.config().clone(),
                critic: critic.config().clone(),
                step,
                epoch,
            },
            arrays,
        }
    }

    /// Rebuilds both networks and loads the stored values into them.
    pub fn restore(&self) -> Result<(Generator, Critic)> {
        let mut g = build_generator(&self.meta.generator, 0)?;
        g.import_arrays(&self.arrays)?;
        let mut c = build_critic(&self.meta.critic, 0)?;
        c.import_arrays(&self.arrays)?;
        Ok((g, c))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        put_len(&mut out, meta.len())?;
        out.extend_from_slice(&meta);
        put_len(&mut out, self.arrays.len())?;
        for a in &self.arrays {
            put_len(&mut out, a.name.len())?;
            out.extend_from_slice(a.name.as_bytes());
            put_len(&mut out, a.shape.len())?;
            for &d in &a.shape {
                put_len(&mut out, d)?;
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("array name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Format("array too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            arrays.push(NamedArray { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint arrays".into()));
        }
        Ok(Self { meta, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let v = u32::try_from(n).map_err(|_| Error::Format(format!("length {n} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
