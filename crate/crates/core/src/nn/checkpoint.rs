//! Binary container for named tensors.
//!
//! Layout (little endian): magic `MUSACKPT`, u32 version, u32 config entry
//! count followed by length-prefixed key/value strings, u32 tensor count,
//! then per tensor a length-prefixed name, u32 rank, u64 dims and f32 data.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::Module;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MUSACKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(config: BTreeMap<String, String>) -> Self {
        Checkpoint {
            config,
            tensors: Vec::new(),
        }
    }

    /// Appends every tensor of `module`, names prefixed with `prefix`.
    pub fn add_module<M: Module + ?Sized>(&mut self, prefix: &str, module: &M) {
        let mut refs = Vec::new();
        module.visit(prefix, &mut refs);
        for p in refs {
            self.tensors.push(Tensor {
                name: p.name,
                shape: p.shape,
                data: p.data.iter().map(|&v| v as f32).collect(),
            });
        }
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let dotted = format!("{prefix}.");
        self.tensors.iter().any(|t| t.name.starts_with(&dotted))
    }

    /// Fills `module` from the tensors stored under `prefix`. Every parameter
    /// must be present with the same shape.
    pub fn restore<M: Module + ?Sized>(&self, prefix: &str, module: &mut M) -> Result<()> {
        let by_name: BTreeMap<&str, &Tensor> =
            self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut params = Vec::new();
        module.visit_mut(prefix, &mut params);
        for p in params {
            let t = by_name
                .get(p.name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            if t.shape != p.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    p.name, t.shape, p.shape
                )));
            }
            for (d, &s) in p.data.iter_mut().zip(&t.data) {
                *d = s as f64;
            }
        }
        Ok(())
    }

    pub fn config_value(&self, key: &str) -> Result<&str> {
        self.config
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("config key {key} missing")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        for (k, v) in &self.config {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut config = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            config.insert(k, v);
        }
        let n = r.u32()?;
        let mut tensors = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(
                len.checked_mul(4)
                    .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
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
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::nn::Linear;
    use crate::rng::Rng;

    #[test]
    fn round_trip_restores_f32_values() {
        let mut rng = Rng::seed_from_u64(4);
        let lin = Linear::new(&mut rng, 3, 2);
        let mut cfg = BTreeMap::new();
        cfg.insert("dim".to_string(), "2".to_string());
        let mut ck = Checkpoint::new(cfg);
        ck.add_module("head", &lin);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.config_value("dim").unwrap(), "2");
        assert!(back.has_prefix("head"));
        let mut other = Linear::zeros(3, 2);
        back.restore("head", &mut other).unwrap();
        for (a, b) in lin.weight.iter().zip(other.weight.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn shape_mismatch_and_corruption_are_rejected() {
        let mut ck = Checkpoint::default();
        ck.add_module("head", &Linear::zeros(3, 2));
        assert!(ck.restore("head", &mut Linear::zeros(4, 2)).is_err());
        assert!(ck.restore("other", &mut Linear::zeros(3, 2)).is_err());
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
