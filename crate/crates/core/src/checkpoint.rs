//! Self-describing binary container for network parameters.
//!
//! Layout: 8-byte magic, little-endian `u32` header length, a JSON header,
//! then every tensor as contiguous little-endian `f32`. The header records
//! the format version, the checkpoint kind, free-form metadata (configs and
//! training log) and a table of tensor names, shapes and offsets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Param, PatchGan, UNet};
use crate::raster::write_atomic;

pub const MAGIC: &[u8; 8] = b"D2CKCKPT";
/// Major version; readers accept any file with the same major version.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Dapi2ck,
    Segmentation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: CheckpointKind,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Decoded container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: CheckpointKind,
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Container {
    pub fn new(kind: CheckpointKind, meta: serde_json::Value) -> Self {
        Self { kind, meta, tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.tensors.insert(name.into(), (shape, data));
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, (shape, data)) in &self.tensors {
            entries.push(TensorEntry { name: name.clone(), shape: shape.clone(), offset, len: data.len() });
            offset += data.len();
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            meta: self.meta.clone(),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 4 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, data) in self.tensors.values() {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint { path: path.to_path_buf(), reason };
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body_start = 12 + hlen;
        if bytes.len() < body_start {
            return Err(bad("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[12..body_start])
            .map_err(|e| bad(format!("malformed header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        let body = &bytes[body_start..];
        let mut tensors = BTreeMap::new();
        for t in header.tensors {
            let (start, end) = (4 * t.offset, 4 * (t.offset + t.len));
            if end > body.len() || t.shape.iter().product::<usize>() != t.len {
                return Err(bad(format!("tensor {} is truncated or inconsistent", t.name)));
            }
            let data = body[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(t.name, (t.shape, data));
        }
        Ok(Self { kind: header.kind, meta: header.meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Short content hash identifying a serialized container.
    pub fn identifier(&self) -> String {
        identifier_of(&self.to_bytes())
    }

    /// Stores every parameter of a model under `prefix`.
    pub fn put_params<'a>(&mut self, prefix: &str, params: Vec<(String, &'a Param<f32>)>) {
        for (name, p) in params {
            self.insert(format!("{prefix}/{name}"), p.shape.clone(), p.value.clone());
        }
    }

    /// Loads parameters stored under `prefix` into `params` (same naming).
    pub fn take_params(&self, prefix: &str, names: Vec<String>, params: Vec<&mut Param<f32>>) -> Result<()> {
        for (name, p) in names.into_iter().zip(params) {
            let key = format!("{prefix}/{name}");
            let (shape, data) = self.tensors.get(&key).ok_or_else(|| Error::Checkpoint {
                path: Default::default(),
                reason: format!("missing tensor {key}"),
            })?;
            if *shape != p.shape {
                return Err(Error::Checkpoint {
                    path: Default::default(),
                    reason: format!("tensor {key} has shape {shape:?}, model expects {:?}", p.shape),
                });
            }
            p.value.copy_from_slice(data);
        }
        Ok(())
    }

    pub fn put_unet(&mut self, prefix: &str, model: &UNet<f32>) {
        self.put_params(prefix, model.named_params());
    }

    pub fn take_unet(&self, prefix: &str, model: &mut UNet<f32>) -> Result<()> {
        let names = model.named_params().into_iter().map(|(n, _)| n).collect();
        self.take_params(prefix, names, model.params_mut())
    }

    pub fn put_patchgan(&mut self, prefix: &str, model: &PatchGan<f32>) {
        self.put_params(prefix, model.named_params());
    }

    pub fn take_patchgan(&self, prefix: &str, model: &mut PatchGan<f32>) -> Result<()> {
        let names = model.named_params().into_iter().map(|(n, _)| n).collect();
        self.take_params(prefix, names, model.params_mut())
    }

    /// Stores optimizer moments; the step count belongs in the metadata.
    pub fn put_adam(&mut self, prefix: &str, adam: &Adam<f32>) {
        for (i, (m, v)) in adam.first.iter().zip(&adam.second).enumerate() {
            self.insert(format!("{prefix}/m{i:03}"), vec![m.len()], m.clone());
            self.insert(format!("{prefix}/v{i:03}"), vec![v.len()], v.clone());
        }
    }

    pub fn take_adam(&self, prefix: &str, config: AdamConfig, step: u64) -> Adam<f32> {
        let mut adam = Adam::new(config);
        adam.step = step;
        let mut i = 0;
        while let (Some((_, m)), Some((_, v))) = (
            self.tensors.get(&format!("{prefix}/m{i:03}")),
            self.tensors.get(&format!("{prefix}/v{i:03}")),
        ) {
            adam.first.push(m.clone());
            adam.second.push(v.clone());
            i += 1;
        }
        adam
    }
}

pub fn identifier_of(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Fills in the file path on errors raised while decoding a loaded container.
pub(crate) fn at_path(err: Error, path: &Path) -> Error {
    match err {
        Error::Checkpoint { reason, .. } => Error::Checkpoint { path: path.to_path_buf(), reason },
        other => other,
    }
}
