//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `FPPOCKPT`, a little-endian `u32` format
//! version, a `u32` header length, a JSON header naming every instance with
//! its architecture and tensor list, then each instance's tensors as
//! row-major little-endian `f32`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::{Architecture, ParameterSet};

pub const MAGIC: &[u8; 8] = b"FPPOCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InstanceEntry {
    name: String,
    architecture: Architecture,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    instances: Vec<InstanceEntry>,
    meta: BTreeMap<String, String>,
}

/// Named parameter sets plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub instances: Vec<(String, ParameterSet)>,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&ParameterSet> {
        self.instances.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            instances: self
                .instances
                .iter()
                .map(|(name, p)| InstanceEntry {
                    name: name.clone(),
                    architecture: p.architecture().clone(),
                    tensors: p
                        .architecture()
                        .layout()
                        .into_iter()
                        .map(|t| TensorEntry { name: t.name, shape: t.shape })
                        .collect(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, p) in &self.instances {
            let mut buf = Vec::with_capacity(p.len() * 4);
            for v in p.as_slice() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        r.read_exact(&mut word)?;
        let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let mut instances = Vec::with_capacity(header.instances.len());
        for entry in header.instances {
            entry.architecture.validate()?;
            let layout = entry.architecture.layout();
            let declared: Vec<_> = entry.tensors.iter().map(|t| (&t.name, &t.shape)).collect();
            let expected: Vec<_> = layout.iter().map(|t| (&t.name, &t.shape)).collect();
            if declared != expected {
                return Err(Error::Checkpoint(format!(
                    "tensor list of '{}' does not match its architecture",
                    entry.name
                )));
            }
            let n = entry.architecture.parameter_count();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            instances.push((entry.name, ParameterSet::from_flat(entry.architecture, data)?));
        }
        Ok(Self { instances, meta: header.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Loads and checks that each named instance has the given architecture.
    pub fn load_matching(path: &Path, expected: &[(&str, &Architecture)]) -> Result<Self> {
        let ck = Self::load(path)?;
        for (name, arch) in expected {
            match ck.get(name) {
                None => return Err(Error::Checkpoint(format!("missing instance '{name}'"))),
                Some(p) if p.architecture() != *arch => {
                    return Err(Error::Checkpoint(format!(
                        "instance '{name}' has architecture {:?}, expected {arch:?}",
                        p.architecture()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(ck)
    }
}
