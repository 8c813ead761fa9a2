//! Flat binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "HSPLCKPT"
//! version  u32       1
//! count    u32       number of records
//! record*  name_len u32 | name (UTF-8) | rank u32 | dims u64 × rank | data f64 × Π dims
//! ```
//!
//! Records are written in ascending name order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::{Error, Real, Result};

pub const MAGIC: &[u8; 8] = b"HSPLCKPT";
pub const VERSION: u32 = 1;

/// Named `f64` tensors, serialized with [`Checkpoint::write_to`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub records: BTreeMap<String, Tensor<f64>>,
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format { path: "<checkpoint>".into(), reason: reason.into() }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.records.insert(name.into(), t.cast());
    }

    pub fn insert_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.records.insert(name.into(), Tensor::scalar(v));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f64>> {
        self.records.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_as<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        Ok(self.get(name)?.cast())
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.get(name)?;
        if t.len() != 1 {
            return Err(bad(format!("record `{name}` is not a scalar")));
        }
        Ok(t.item())
    }

    /// Every parameter of `store`, keys prefixed with `prefix`.
    pub fn insert_params<T: Real>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (name, p) in store.iter() {
            self.insert(format!("{prefix}{name}"), &p.tensor());
        }
    }

    /// Rebuilds a parameter store from every record under `prefix`.
    pub fn params<T: Real>(&self, prefix: &str) -> ParamStore<T> {
        let mut store = ParamStore::new();
        for (name, t) in self.records.range(prefix.to_string()..) {
            let Some(rest) = name.strip_prefix(prefix) else { break };
            store.insert(rest, t.cast());
        }
        store
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for (name, t) in &self.records {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = read_u32(r)?;
        let mut records = BTreeMap::new();
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            if len > 4096 {
                return Err(bad("record name too long"));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("record name is not UTF-8"))?;
            let rank = read_u32(r)? as usize;
            if rank == 0 || rank > 8 {
                return Err(bad(format!("record `{name}` has rank {rank}")));
            }
            let dims = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<std::io::Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            records.insert(name, Tensor::new(dims, data)?);
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let mut r = std::io::BufReader::new(file);
        Self::read_from(&mut r).map_err(|e| match e {
            Error::Format { reason, .. } => Error::Format { path: path.to_path_buf(), reason },
            other => other,
        })
    }
}
