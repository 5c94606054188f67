//! Versioned binary checkpoints: magic, format version, run metadata and a
//! named tensor table with little-endian `f64` payloads.

use std::fs;
use std::path::Path;

use crate::config::{AblationConfig, RunConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MSEGCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// [`RunConfig::to_text`] of the run.
    pub config: String,
    /// Ablation preset name.
    pub ablation: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(cfg: &RunConfig, ablation: &str, store: &ParamStore) -> Self {
        Checkpoint {
            config: cfg.to_text(),
            ablation: ablation.to_string(),
            tensors: store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend((s.len() as u32).to_le_bytes());
            out.extend(s.as_bytes());
        };
        put_str(&mut out, &self.config);
        put_str(&mut out, &self.ablation);
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend((t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend(x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("checkpoint: bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint: unsupported version {version}")));
        }
        let config = r.string()?;
        let ablation = r.string()?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format("checkpoint: shape overflow".into()))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Format("checkpoint: size overflow".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("checkpoint: trailing bytes".into()));
        }
        Ok(Checkpoint { config, ablation, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config)
    }

    /// Rebuilds the model and loads every tensor; names and shapes must match.
    pub fn into_model(&self) -> Result<(Model, ParamStore)> {
        let cfg = self.run_config()?;
        let abl = AblationConfig::preset(&self.ablation)?;
        let (model, mut store) = Model::new(&cfg, abl)?;
        self.load_into(&mut store)?;
        Ok((model, store))
    }

    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (name, t) in &self.tensors {
            let id = store.id(name).ok_or_else(|| Error::Config(format!("checkpoint tensor {name:?} not in model")))?;
            let have = store.get(id).shape().to_vec();
            if have != t.shape() {
                return Err(Error::Config(format!(
                    "tensor {name:?}: checkpoint shape {:?} vs model shape {have:?}",
                    t.shape()
                )));
            }
            *store.get_mut(id) = t.clone();
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format("checkpoint: truncated".into()));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint: invalid UTF-8".into()))
    }
}
