//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic     8 bytes  "TFCKPT01"
//! meta      u32 length + UTF-8 text (free-form key=value lines)
//! step      u64      optimizer step counter
//! lr        f64      optimizer learning rate
//! sections  u32      count, then per section:
//!             u32 length + UTF-8 section name ("params", "adam.m", "adam.v")
//!             u32 record count, then per record:
//!               u32 length + UTF-8 tensor name
//!               u32 rank, rank x u64 extents
//!               product(extents) x f64 payload
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::adam::Adam;
use super::params::ParamStore;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TFCKPT01";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub params: ParamStore,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_str(&mut out, &self.meta);
        out.extend_from_slice(&self.optimizer.step.to_le_bytes());
        out.extend_from_slice(&self.optimizer.lr.to_le_bytes());
        out.extend_from_slice(&3u32.to_le_bytes());
        let params: Vec<(&String, &Tensor)> = self.params.iter().collect();
        put_section(&mut out, "params", &params);
        put_section(&mut out, "adam.m", &self.optimizer.first.iter().collect::<Vec<_>>());
        put_section(&mut out, "adam.v", &self.optimizer.second.iter().collect::<Vec<_>>());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let meta = r.string()?;
        let step = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let lr = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let n_sections = r.u32()?;
        let mut sections: BTreeMap<String, BTreeMap<String, Tensor>> = BTreeMap::new();
        for _ in 0..n_sections {
            let name = r.string()?;
            let count = r.u32()?;
            let mut records = BTreeMap::new();
            for _ in 0..count {
                let tname = r.string()?;
                let rank = r.u32()? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize);
                }
                let n: usize = shape.iter().product();
                let raw = r.take(n * 8)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                records.insert(tname, Tensor::new(shape, data));
            }
            sections.insert(name, records);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after last section"));
        }
        let mut take = |s: &str| {
            sections.remove(s).ok_or_else(|| Error::format(path, format!("missing section `{s}`")))
        };
        let mut params = ParamStore::new();
        for (n, t) in take("params")? {
            params.insert(n, t);
        }
        let mut optimizer = Adam::new(lr);
        optimizer.step = step;
        optimizer.first = take("adam.m")?;
        optimizer.second = take("adam.v")?;
        Ok(Self { meta, params, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Fails unless `reference` has exactly the same parameter names and shapes.
    pub fn check_architecture(&self, reference: &ParamStore) -> Result<()> {
        for (name, t) in reference.iter() {
            match self.params.get(name) {
                None => return Err(Error::Checkpoint(format!("missing parameter `{name}`"))),
                Some(c) if c.shape() != t.shape() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        c.shape(),
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.params.names().find(|n| !reference.contains(n)) {
            return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_section(out: &mut Vec<u8>, name: &str, records: &[(&String, &Tensor)]) {
    put_str(out, name);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (n, t) in records {
        put_str(out, n);
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(self.path, "invalid UTF-8 name"))
    }
}
