//! Versioned binary container for parameter groups.
//!
//! Layout: the 8-byte magic `STEPGAN\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then every
//! tensor's values in little-endian row-major order. The header records the
//! scalar type, free-form metadata and the name and shape of each tensor, so
//! a load reproduces the saved parameters bit for bit.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::core::{CoreDims, RecurrentCore};
use super::{Generator, ParamStore, Real, ScorerInput, StepScorer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"STEPGAN\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    dtype: String,
    meta: Value,
    groups: Vec<GroupHeader>,
}

#[derive(Serialize, Deserialize)]
struct GroupHeader {
    name: String,
    tensors: Vec<(String, [usize; 2])>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive<F> {
    pub kind: String,
    pub meta: Value,
    pub groups: Vec<(String, ParamStore<F>)>,
}

impl<F: Real> Archive<F> {
    pub fn new(kind: &str, meta: Value) -> Self {
        Self {
            kind: kind.to_string(),
            meta,
            groups: Vec::new(),
        }
    }

    pub fn with_group(mut self, name: &str, store: ParamStore<F>) -> Self {
        self.groups.push((name.to_string(), store));
        self
    }

    pub fn group(&self, name: &str) -> Option<&ParamStore<F>> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn take_group(&mut self, name: &str) -> Option<ParamStore<F>> {
        let idx = self.groups.iter().position(|(n, _)| n == name)?;
        Some(self.groups.remove(idx).1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            dtype: F::DTYPE.to_string(),
            meta: self.meta.clone(),
            groups: self
                .groups
                .iter()
                .map(|(name, store)| GroupHeader {
                    name: name.clone(),
                    tensors: store
                        .names()
                        .iter()
                        .zip(store.tensors())
                        .map(|(n, t)| (n.clone(), [t.nrows(), t.ncols()]))
                        .collect(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(header.len() + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, store) in &self.groups {
            for t in store.tensors() {
                for v in t.iter() {
                    v.to_le_bytes_vec(&mut out);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err("not a stepgan checkpoint".into());
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = 20 + header_len;
        if bytes.len() < body {
            return Err("truncated header".into());
        }
        let header: Header = serde_json::from_slice(&bytes[20..body]).map_err(|e| e.to_string())?;
        if header.dtype != F::DTYPE {
            return Err(format!("stored dtype {} but {} requested", header.dtype, F::DTYPE));
        }
        let width = std::mem::size_of::<F>();
        let mut offset = body;
        let mut groups = Vec::new();
        for g in header.groups {
            let mut store = ParamStore::new();
            for (name, [rows, cols]) in g.tensors {
                let end = offset + rows * cols * width;
                if end > bytes.len() {
                    return Err(format!("truncated data in {}/{name}", g.name));
                }
                let values: Vec<F> = bytes[offset..end].chunks_exact(width).map(F::from_le_slice).collect();
                offset = end;
                store.push(&name, Array2::from_shape_vec((rows, cols), values).expect("shape matches"));
            }
            groups.push((g.name, store));
        }
        if offset != bytes.len() {
            return Err("trailing bytes after tensor data".into());
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            groups,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|detail| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        })
    }
}

/// Models that round-trip through an [`Archive`] group plus metadata.
pub trait Checkpointable<F: Real>: Sized {
    const KIND: &'static str;

    fn describe(&self) -> Value;
    fn store(&self) -> &ParamStore<F>;
    fn rebuild(meta: &Value, store: ParamStore<F>) -> std::result::Result<Self, String>;

    fn to_archive(&self, extra: Value) -> Archive<F> {
        let meta = serde_json::json!({ "model": self.describe(), "extra": extra });
        Archive::new(Self::KIND, meta).with_group("params", self.store().clone())
    }

    fn from_archive(mut archive: Archive<F>) -> std::result::Result<(Self, Value), String> {
        if archive.kind != Self::KIND {
            return Err(format!("expected a {} checkpoint, found {}", Self::KIND, archive.kind));
        }
        let store = archive.take_group("params").ok_or("missing params group")?;
        let model = Self::rebuild(&archive.meta["model"], store)?;
        Ok((model, archive.meta["extra"].clone()))
    }

    fn save(&self, path: &Path, extra: Value) -> Result<()> {
        self.to_archive(extra).write(path)
    }

    fn load(path: &Path) -> Result<(Self, Value)> {
        Self::from_archive(Archive::read(path)?).map_err(|detail| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        })
    }
}


impl<F: Real> Checkpointable<F> for Generator<F> {
    const KIND: &'static str = "generator";

    fn describe(&self) -> Value {
        serde_json::json!({ "dims": self.core().dims() })
    }

    fn store(&self) -> &ParamStore<F> {
        self.params()
    }

    fn rebuild(meta: &Value, store: ParamStore<F>) -> std::result::Result<Self, String> {
        let dims: CoreDims = serde_json::from_value(meta["dims"].clone()).map_err(|e| e.to_string())?;
        let core = RecurrentCore::from_params(dims, store).ok_or("parameter layout does not match dims")?;
        Ok(Generator::from_core(core))
    }
}

impl<F: Real> Checkpointable<F> for StepScorer<F> {
    const KIND: &'static str = "step-scorer";

    fn describe(&self) -> Value {
        serde_json::json!({ "dims": self.core().dims(), "input": self.input() })
    }

    fn store(&self) -> &ParamStore<F> {
        self.params()
    }

    fn rebuild(meta: &Value, store: ParamStore<F>) -> std::result::Result<Self, String> {
        let dims: CoreDims = serde_json::from_value(meta["dims"].clone()).map_err(|e| e.to_string())?;
        let input: ScorerInput = serde_json::from_value(meta["input"].clone()).map_err(|e| e.to_string())?;
        let core = RecurrentCore::from_params(dims, store).ok_or("parameter layout does not match dims")?;
        Ok(StepScorer::from_core(core, input))
    }
}
