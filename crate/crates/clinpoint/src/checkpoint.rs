//! Checkpoint archive: a flat map from tensor name to shape plus a
//! little-endian f64 payload, preceded by a JSON manifest carrying the
//! config hash and step counter. Entries are written sorted by name so the
//! file is byte-stable for a given state.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CPCKPT01";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    step: u64,
    epoch: u64,
    entries: Vec<EntryMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryMeta {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub config_hash: String,
    pub step: u64,
    pub epoch: u64,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(config_hash: String, step: u64, epoch: u64) -> Self {
        Checkpoint {
            config_hash,
            step,
            epoch,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            entries.push(EntryMeta {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len: t.numel() as u64,
            });
            offset += t.numel() as u64;
        }
        let manifest = Manifest {
            config_hash: self.config_hash.clone(),
            step: self.step,
            epoch: self.epoch,
            entries,
        };
        let manifest_bytes = serde_json::to_vec(&manifest)?;
        let mut f = File::create(path)?;
        f.write_all(MAGIC)?;
        f.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&manifest_bytes)?;
        for (_, t) in &self.tensors {
            let mut buf = Vec::with_capacity(t.numel() * 8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            f.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = File::open(path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut len = [0u8; 8];
        f.read_exact(&mut len)?;
        let mlen = u64::from_le_bytes(len) as usize;
        let mut mbytes = vec![0u8; mlen];
        f.read_exact(&mut mbytes)?;
        let manifest: Manifest = serde_json::from_slice(&mbytes)?;
        let mut payload = Vec::new();
        f.read_to_end(&mut payload)?;
        let mut tensors = BTreeMap::new();
        for e in &manifest.entries {
            let start = e.offset as usize * 8;
            let end = start + e.len as usize * 8;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!(
                    "entry {} exceeds payload ({} > {})",
                    e.name,
                    end,
                    payload.len()
                )));
            }
            let mut data = Vec::with_capacity(e.len as usize);
            for chunk in payload[start..end].chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            let expected: usize = e.shape.iter().product();
            if expected != data.len() {
                return Err(Error::Checkpoint(format!(
                    "entry {}: shape {:?} does not match payload length {}",
                    e.name,
                    e.shape,
                    data.len()
                )));
            }
            tensors.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
        }
        Ok(Checkpoint {
            config_hash: manifest.config_hash,
            step: manifest.step,
            epoch: manifest.epoch,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        let mut ck = Checkpoint::new("abc123".into(), 42, 7);
        ck.insert(
            "layer.w",
            Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE]).unwrap(),
        );
        ck.insert("bias", Tensor::new(vec![1], vec![0.125]).unwrap());
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.config_hash, "abc123");
        assert_eq!(back.step, 42);
        assert_eq!(back.epoch, 7);
        assert_eq!(back.tensors["layer.w"].data(), ck.tensors["layer.w"].data());
        assert_eq!(back.tensors["bias"].shape(), &[1]);
    }

    #[test]
    fn save_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let mut ck = Checkpoint::new("h".into(), 1, 1);
        ck.insert("z", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        ck.insert("a", Tensor::new(vec![1], vec![-1.0]).unwrap());
        ck.save(&p1).unwrap();
        ck.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
