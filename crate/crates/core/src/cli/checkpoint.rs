//! `T2CK1` checkpoints: named f32 tensors plus a trailing CRC-32.
//!
//! ```text
//! "T2CK1" | count u32 | count × (name_len u32 | name | rank u32 | rank × dim u32 | f32 data) | crc32 u32
//! ```
//! The checksum covers every preceding byte. The network architecture travels in
//! a rank-1 entry named [`ARCH_ENTRY`].

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::cubefile::io_context;
use crate::error::{Error, Result};
use crate::network::{ModelParams, NetConfig, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"T2CK1";
pub const ARCH_ENTRY: &str = "meta.arch";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

fn narrow(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, values: Vec<f32>) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Format(format!("duplicate checkpoint entry '{name}'")));
        }
        if dims.iter().product::<usize>() != values.len() {
            return Err(Error::dim(format!(
                "entry '{name}' has dims {dims:?} but {} values",
                values.len()
            )));
        }
        self.entries.push(CheckpointEntry { name, dims, values });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Parameters narrowed to f32, preceded by the architecture record.
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        let mut ck = Checkpoint::default();
        let arch = params.config.encode();
        ck.push(ARCH_ENTRY, vec![arch.len()], narrow(&arch))?;
        for (name, t) in params.tensors() {
            ck.push(name, t.shape().to_vec(), narrow(t.data()))?;
        }
        Ok(ck)
    }

    pub fn config(&self) -> Result<NetConfig> {
        let arch = self
            .get(ARCH_ENTRY)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks '{ARCH_ENTRY}'")))?;
        let v: Vec<f64> = arch.values.iter().map(|&x| f64::from(x)).collect();
        NetConfig::decode(&v)
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let config = self.config()?;
        let named: Vec<(String, Tensor)> = self
            .entries
            .iter()
            .filter(|e| e.name != ARCH_ENTRY)
            .map(|e| {
                let data = e.values.iter().map(|&x| f64::from(x)).collect();
                Ok((e.name.clone(), Tensor::new(e.dims.clone(), data)?))
            })
            .collect::<Result<_>>()?;
        ModelParams::from_named(&config, &named)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let u32_of = |v: usize| u32::try_from(v).map_err(|_| Error::Format(format!("{v} exceeds u32")));
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&u32_of(self.entries.len())?.to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&u32_of(e.name.len())?.to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&u32_of(e.dims.len())?.to_le_bytes());
            for &d in &e.dims {
                out.extend_from_slice(&u32_of(d)?.to_le_bytes());
            }
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 13 || &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a T2CK1 checkpoint".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Format(format!(
                "checkpoint checksum mismatch: stored {stored:08x}, computed {actual:08x}"
            )));
        }
        let mut r = Reader { buf: body, pos: 5 };
        let count = r.u32()?;
        let mut ck = Checkpoint::default();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let len = r.u32()?;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(Error::Format(format!("duplicate checkpoint entry '{name}'")));
            }
            let rank = r.u32()?;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Format("entry size overflows".into()))?;
            let values = r
                .take(n)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            ck.entries.push(CheckpointEntry { name, dims, values });
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!(
                "{} unexpected bytes after the last entry",
                body.len() - r.pos
            )));
        }
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| io_context(e, path))?;
        Self::from_bytes(&bytes)
    }
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
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn save_params(path: &Path, params: &ModelParams) -> Result<()> {
    Checkpoint::from_params(params)?.write(path)
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    Checkpoint::read(path)?.to_params()
}
