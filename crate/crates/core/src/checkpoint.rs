//! Versioned checkpoint container.
//!
//! ```text
//! b"SGCK" | version u32 | meta_len u32 | meta JSON
//! tensor_count u32
//! per tensor: name_len u16 | name | trainable u8 | ndim u8 | dims u32… | f32 data
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{DiscriminatorSpec, GeneratorSpec};
use crate::nn::NetParams;
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    /// Completed training steps.
    pub step: u64,
    pub adam: AdamSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<AdamConfig> for AdamSettings {
    fn from(c: AdamConfig) -> Self {
        AdamSettings {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
        }
    }
}

impl From<AdamSettings> for AdamConfig {
    fn from(c: AdamSettings) -> Self {
        AdamConfig {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
        }
    }
}

/// Everything needed to generate from, or resume, a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub generator: NetParams<T>,
    pub discriminator: NetParams<T>,
    pub generator_adam: Adam<T>,
    pub discriminator_adam: Adam<T>,
}

const SECTIONS: [&str; 6] = ["g/", "d/", "g.adam.m/", "g.adam.v/", "d.adam.m/", "d.adam.v/"];

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::format("meta", e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let groups = [
            &self.generator,
            &self.discriminator,
            &self.generator_adam.m,
            &self.generator_adam.v,
            &self.discriminator_adam.m,
            &self.discriminator_adam.v,
        ];
        let count: usize = groups.iter().map(|g| g.len()).sum();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (prefix, group) in SECTIONS.iter().zip(groups) {
            for t in group.tensors() {
                let name = format!("{prefix}{}", t.name);
                out.extend_from_slice(&(name.len() as u16).to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                out.push(t.trainable as u8);
                out.push(t.shape.len() as u8);
                for &d in &t.shape {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for &v in &t.data {
                    out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format("magic", "not a checkpoint file"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("version", format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32("meta length")? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "meta")?)
            .map_err(|e| Error::format("meta", e.to_string()))?;
        let count = r.u32("tensor count")? as usize;
        let mut groups: [NetParams<T>; 6] = Default::default();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2, "tensor name length")?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::format("tensor name", "not UTF-8"))?
                .to_string();
            let trainable = r.take(1, "trainable flag")?[0] != 0;
            let ndim = r.take(1, "tensor ndim")?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("tensor dims")? as usize);
            }
            let len: usize = shape.iter().product();
            let data = r
                .take(4 * len, "tensor data")?
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect();
            let (slot, prefix) = SECTIONS
                .iter()
                .enumerate()
                .filter(|(_, p)| name.starts_with(*p))
                .max_by_key(|(_, p)| p.len())
                .ok_or_else(|| Error::format("tensor name", format!("unknown section in {name}")))?;
            groups[slot].push(&name[prefix.len()..], shape, data, trainable);
        }
        if r.pos != bytes.len() {
            return Err(Error::format("trailer", "unexpected bytes after the last tensor"));
        }
        let [generator, discriminator, gm, gv, dm, dv] = groups;
        let cfg: AdamConfig = meta.adam.into();
        let step = meta.step;
        Ok(Checkpoint {
            meta,
            generator,
            discriminator,
            generator_adam: Adam { config: cfg, t: step, m: gm, v: gv },
            discriminator_adam: Adam { config: cfg, t: step, m: dm, v: dv },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(field, "checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }
}
