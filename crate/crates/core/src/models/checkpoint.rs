//! Named-tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DSYN" | u32 version | u32 entry count
//! per entry: u16 name length | name bytes | u8 ndim | u32 dims[ndim] | f32 payload
//! ```
//!
//! Non-tensor state (RNG position, counters, the resolved config) is stored
//! as byte-valued tensors under `meta.*` names.

use std::path::Path;

use super::params::ParamStore;
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DSYN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated file: needed {n} bytes for {what} at offset {}, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = t,
            None => self.entries.push((name, t)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    /// Stores raw bytes, one per element (exact in f32).
    pub fn insert_bytes(&mut self, name: &str, bytes: &[u8]) {
        let data = if bytes.is_empty() {
            vec![-1.0]
        } else {
            bytes.iter().map(|&b| b as f32).collect()
        };
        let n = data.len();
        self.insert(name, Tensor::from_raw(vec![n], data));
    }

    pub fn bytes(&self, name: &str) -> Result<Vec<u8>> {
        let t = self.require(name)?;
        if t.data() == [-1.0] {
            return Ok(Vec::new());
        }
        t.data()
            .iter()
            .map(|&v| {
                if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                    Ok(v as u8)
                } else {
                    Err(Error::Checkpoint(format!("{name} is not a byte tensor")))
                }
            })
            .collect()
    }

    pub fn insert_u64(&mut self, name: &str, v: u64) {
        self.insert_bytes(name, &v.to_le_bytes());
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        let b = self.bytes(name)?;
        let arr: [u8; 8] = b
            .try_into()
            .map_err(|_| Error::Checkpoint(format!("{name} is not an 8-byte integer")))?;
        Ok(u64::from_le_bytes(arr))
    }

    /// Adds every tensor of `store` under `prefix.`.
    pub fn insert_store(&mut self, prefix: &str, store: &ParamStore<f32>) {
        for (name, t) in store.names().iter().zip(store.tensors()) {
            self.insert(format!("{prefix}.{name}"), t.clone());
        }
    }

    /// Overwrites `store` from the entries under `prefix.`. Every store
    /// parameter must be present with matching dims, and no unknown names
    /// may appear under the prefix.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore<f32>) -> Result<()> {
        let dotted = format!("{prefix}.");
        for (name, _) in &self.entries {
            if let Some(rest) = name.strip_prefix(&dotted) {
                if !store.names().iter().any(|n| n == rest) {
                    return Err(Error::Checkpoint(format!("unknown tensor name {name}")));
                }
            }
        }
        let names = store.names().to_vec();
        for (name, slot) in names.iter().zip(store.tensors_mut()) {
            let full = format!("{dotted}{name}");
            let t = self.require(&full)?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "{full} has dims {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            let nb = name.as_bytes();
            let len = u16::try_from(nb.len())
                .map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
            let ndim = u8::try_from(t.shape().len())
                .map_err(|_| Error::Checkpoint(format!("{name} has too many dims")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(nb);
            out.push(ndim);
            for &d in t.shape() {
                let d = u32::try_from(d)
                    .map_err(|_| Error::Checkpoint(format!("{name} dim {d} exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic (expected DSYN)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let count = r.u32("entry count")?;
        let mut entries = Vec::with_capacity(count.min(4096) as usize);
        for i in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Checkpoint(format!("entry {i} name is not UTF-8")))?
                .to_string();
            let ndim = r.u8("ndim")? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32("dims")? as usize);
            }
            let n: usize = dims.iter().product();
            let payload = r.take(n * 4, &name)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(&dims, data)
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            entries.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last entry",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
