//! Model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `MVVMCKPT` |
//! | 4 | format version (`u32`) |
//! | 8 | header length `L` (`u64`) |
//! | L | UTF-8 JSON header: `kind`, `seed`, `config`, `tensors` |
//! | rest | every tensor's values as `f64`, concatenated in table order |
//!
//! Each entry of the tensor table records `name`, `shape`, `trainable`,
//! `offset` and `len` (in values, relative to the start of the data block).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Module, Param};

pub const MAGIC: &[u8; 8] = b"MVVMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    #[serde(skip)]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TableEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    seed: u64,
    config: serde_json::Value,
    tensors: Vec<TableEntry>,
}

/// Parameters of one or more modules plus the configuration and seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl ModelCheckpoint {
    pub fn new(kind: impl Into<String>, seed: u64, config: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            seed,
            config,
            tensors: Vec::new(),
        }
    }

    /// Appends every parameter of `module`, names prefixed by `prefix`.
    pub fn push_module<M: Module + ?Sized>(&mut self, prefix: &str, module: &M) {
        module.visit_params(&mut |p: &Param| {
            self.tensors.push(NamedTensor {
                name: format!("{prefix}{}", p.name),
                shape: p.shape.clone(),
                trainable: p.trainable,
                values: p.value.clone(),
            })
        });
    }

    pub fn with_module<M: Module + ?Sized>(mut self, prefix: &str, module: &M) -> Self {
        self.push_module(prefix, module);
        self
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.tensors.iter().any(|t| t.name.starts_with(prefix))
    }

    /// Overwrites every parameter of `module` with the stored tensor of the same
    /// (prefixed) name. Every parameter must be present with a matching shape.
    pub fn restore_module<M: Module + ?Sized>(&self, prefix: &str, module: &mut M) -> Result<()> {
        let mut failure = None;
        module.visit_params_mut(&mut |p: &mut Param| {
            if failure.is_some() {
                return;
            }
            let name = format!("{prefix}{}", p.name);
            match self.get(&name) {
                None => failure = Some(format!("tensor {name} not found")),
                Some(t) if t.shape != p.shape => {
                    failure = Some(format!("tensor {name} has shape {:?}, model expects {:?}", t.shape, p.shape))
                }
                Some(t) => p.value.copy_from_slice(&t.values),
            }
        });
        match failure {
            Some(msg) => Err(Error::Checkpoint(msg)),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let table = self
            .tensors
            .iter()
            .map(|t| {
                let e = TableEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    trainable: t.trainable,
                    offset,
                    len: t.values.len(),
                };
                offset += t.values.len();
                e
            })
            .collect();
        let header = Header {
            kind: self.kind.clone(),
            seed: self.seed,
            config: self.config.clone(),
            tensors: table,
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let data_start = 20usize.checked_add(hlen).filter(|e| *e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..data_start]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let data = &bytes[data_start..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            if e.shape.iter().product::<usize>() != e.len {
                return Err(Error::Checkpoint(format!("tensor {} length disagrees with its shape", e.name)));
            }
            let (lo, hi) = (e.offset * 8, (e.offset + e.len) * 8);
            if hi > data.len() {
                return Err(Error::Checkpoint(format!("tensor {} runs past the end of the file", e.name)));
            }
            let values = data[lo..hi]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                trainable: e.trainable,
                values,
            });
        }
        Ok(Self {
            kind: header.kind,
            seed: header.seed,
            config: header.config,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingCheckpoint { path: path.to_path_buf() },
            _ => Error::io(path, e),
        })?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
