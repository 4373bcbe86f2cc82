//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "PVFNCKPT"
//! version      u32
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON (CheckpointHeader)
//! n_tensors    u32
//! n_tensors x {
//!     ndim     u32
//!     dims     ndim x u64
//!     data     prod(dims) x f32
//! }
//! ```
//!
//! Tensors follow layer declaration order: conv and dense layers store weight
//! then bias, batchnorm layers gamma, beta, running mean, running variance.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::ArchitectureConfig;
use super::network::Network;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PVFNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub architecture: ArchitectureConfig,
    pub architecture_hash: String,
    /// Class name for each output index.
    pub class_names: Vec<String>,
    pub seed: u64,
    pub precision: String,
    /// Preprocessing and training conventions needed to reproduce evaluation.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub network: Network<f32>,
}

impl Checkpoint {
    pub fn new(network: Network<f32>, class_names: Vec<String>, seed: u64, metadata: BTreeMap<String, String>) -> Self {
        let architecture = network.config().clone();
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                architecture_hash: architecture.architecture_hash(),
                architecture,
                class_names,
                seed,
                precision: "f32".into(),
                metadata,
            },
            network,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let state = self.network.state();
        let mut out = Vec::with_capacity(
            32 + header.len()
                + state
                    .iter()
                    .map(|t| 4 + 8 * t.shape().len() + 4 * t.len())
                    .sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(state.len() as u32).to_le_bytes());
        for t in state {
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let header_len = usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("header too large".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
        let hash = header.architecture.architecture_hash();
        if hash != header.architecture_hash {
            return Err(Error::Checkpoint(format!(
                "architecture hash {} does not match embedded architecture ({hash})",
                header.architecture_hash
            )));
        }
        let mut network = Network::<f32>::zeros(&header.architecture)?;
        let count = r.u32()? as usize;
        let mut slots = network.state_mut();
        if count != slots.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {count} tensors, architecture needs {}",
                slots.len()
            )));
        }
        for (i, slot) in slots.iter_mut().enumerate() {
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(Error::Checkpoint(format!("tensor {i} has implausible rank {ndim}")));
            }
            let dims = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if dims != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i} has shape {dims:?}, architecture expects {:?}",
                    slot.shape()
                )));
            }
            let raw = r.take(4 * slot.len())?;
            for (v, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            }
        }
        drop(slots);
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { header, network })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads a checkpoint and refuses it unless its architecture is exactly
    /// `expected`.
    pub fn load_expecting(path: &Path, expected: &ArchitectureConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        ckpt.ensure_architecture(expected)?;
        Ok(ckpt)
    }

    pub fn ensure_architecture(&self, expected: &ArchitectureConfig) -> Result<()> {
        if self.header.architecture_hash == expected.architecture_hash() {
            return Ok(());
        }
        let have = self.header.architecture.input_shape().ok();
        let want = expected.input_shape().ok();
        Err(Error::Checkpoint(format!(
            "checkpoint architecture '{}' (input {have:?}) does not match expected '{}' (input {want:?})",
            self.header.architecture.name, expected.name
        )))
    }
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated file: needed {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
