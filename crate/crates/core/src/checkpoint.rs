//! Binary tensor container used for checkpoints and datasets.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0   4 bytes  magic "GAMR"
//! 4   u32      format version
//! 8   u64      manifest length L
//! 16  L bytes  JSON manifest
//! 16+L         payload: each entry's scalars, little-endian, at its offset
//! ```
//!
//! Offsets in the manifest are relative to the start of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::search_space::DiscreteArch;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"GAMR";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// On-disk scalar type of an entry. Values are always `f64` in memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    F32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: u64,
}

impl EntryMeta {
    fn byte_len(&self) -> Option<u64> {
        let n = self.shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d))?;
        (n as u64).checked_mul(self.dtype.size() as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub entries: Vec<EntryMeta>,
    #[serde(default)]
    pub arch: Option<DiscreteArch>,
    #[serde(default)]
    pub config_hash: Option<String>,
    /// Free-form run metadata.
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// A decoded container: manifest plus tensors in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub manifest: Manifest,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.manifest
            .entries
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.tensors[i])
    }

    /// All entries as a named set.
    pub fn into_params(self) -> Result<ParamSet> {
        let mut set = ParamSet::default();
        for (e, t) in self.manifest.entries.into_iter().zip(self.tensors) {
            set.insert(e.name, t)?;
        }
        Ok(set)
    }
}

/// Accumulates entries for one container.
#[derive(Debug, Default)]
pub struct ContainerWriter {
    entries: Vec<EntryMeta>,
    payload: Vec<u8>,
    pub arch: Option<DiscreteArch>,
    pub config_hash: Option<String>,
    pub extra: serde_json::Value,
}

impl ContainerWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, t: &Tensor, dtype: DType) -> Result<()> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Construction(format!("duplicate container entry {name:?}")));
        }
        self.entries.push(EntryMeta {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype,
            offset: self.payload.len() as u64,
        });
        match dtype {
            DType::F64 => t
                .data()
                .iter()
                .for_each(|v| self.payload.extend_from_slice(&v.to_le_bytes())),
            DType::F32 => t
                .data()
                .iter()
                .for_each(|v| self.payload.extend_from_slice(&(*v as f32).to_le_bytes())),
        }
        Ok(())
    }

    pub fn push_params(&mut self, params: &ParamSet, dtype: DType) -> Result<()> {
        for (name, t) in params.iter() {
            self.push(name, t, dtype)?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            entries: self.entries,
            arch: self.arch,
            config_hash: self.config_hash,
            extra: self.extra,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let bytes = self.finish()?;
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, bytes)?;
        Ok(())
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corruption(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::Format("not a GAMR container (bad magic)".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(corrupt("truncated header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version > FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let payload_start = (HEADER_LEN as u64)
        .checked_add(mlen)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| corrupt("truncated manifest"))? as usize;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..payload_start])
        .map_err(|e| corrupt(format!("unreadable manifest: {e}")))?;
    let payload = &bytes[payload_start..];

    let mut spans = Vec::with_capacity(manifest.entries.len());
    let mut tensors = Vec::with_capacity(manifest.entries.len());
    for (i, e) in manifest.entries.iter().enumerate() {
        if manifest.entries[..i].iter().any(|p| p.name == e.name) {
            return Err(corrupt(format!("duplicate entry {:?}", e.name)));
        }
        let len = e
            .byte_len()
            .ok_or_else(|| corrupt(format!("entry {:?} too large", e.name)))?;
        let end = e
            .offset
            .checked_add(len)
            .filter(|&end| end <= payload.len() as u64)
            .ok_or_else(|| corrupt(format!("entry {:?} runs past the end of the payload", e.name)))?;
        spans.push((e.offset, end));
        let raw = &payload[e.offset as usize..end as usize];
        let data: Vec<f64> = match e.dtype {
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
        };
        tensors.push(Tensor::new(&e.shape, data)?);
    }
    spans.sort_unstable();
    if spans.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(corrupt("overlapping entries"));
    }
    Ok(Container { manifest, tensors })
}

pub fn read_container(path: &Path) -> Result<Container> {
    decode(&fs::read(path)?)
}

/// Model checkpoint: weights, optional discrete architecture and the
/// producing config's hash.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub arch: Option<DiscreteArch>,
    pub config_hash: Option<String>,
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = ContainerWriter::new();
    w.push_params(&ckpt.params, DType::F64)?;
    w.arch = ckpt.arch.clone();
    w.config_hash = ckpt.config_hash.clone();
    w.extra = ckpt.extra.clone();
    w.write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c = read_container(path)?;
    let arch = c.manifest.arch.clone();
    let config_hash = c.manifest.config_hash.clone();
    let extra = c.manifest.extra.clone();
    Ok(Checkpoint {
        params: c.into_params()?,
        arch,
        config_hash,
        extra,
    })
}
