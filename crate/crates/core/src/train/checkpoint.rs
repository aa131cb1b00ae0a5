//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `NIMAENH1`, a little-endian `u32` manifest length,
//! the UTF-8 manifest (sorted `key=value` lines), the tensor payload in
//! little-endian `f32` or `f64`, and a little-endian CRC-32 of everything
//! before it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::config::KvConfig;
use crate::enhance::{build_can, CanConfig, CanModel};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::quality::{build_tiny_nima, NimaConfig, NimaModel};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"NIMAENH1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Dtype {
    #[default]
    F32,
    /// Exact storage; round trips are bitwise.
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

impl FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::InvalidConfig(format!("unknown dtype `{other}`"))),
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Nima,
    Can,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Nima => "nima",
            ModelKind::Can => "can",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nima" => Ok(ModelKind::Nima),
            "can" => Ok(ModelKind::Can),
            other => Err(Error::Corrupt(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Named tensors plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub dtype: Dtype,
    pub tensors: ParamSet,
    /// Model architecture and run metadata (step, config hash, ...).
    pub metadata: KvConfig,
}

const MODEL_PREFIX: &str = "model.";

impl Checkpoint {
    pub fn from_nima(model: &NimaModel, dtype: Dtype) -> Self {
        let mut metadata = KvConfig::new();
        model.config.to_kv(&mut metadata, MODEL_PREFIX);
        Checkpoint { kind: ModelKind::Nima, dtype, tensors: model.params.clone(), metadata }
    }

    pub fn from_can(model: &CanModel, dtype: Dtype) -> Self {
        let mut metadata = KvConfig::new();
        model.config.to_kv(&mut metadata, MODEL_PREFIX);
        Checkpoint { kind: ModelKind::Can, dtype, tensors: model.params.clone(), metadata }
    }

    pub fn set_meta(&mut self, key: &str, value: impl fmt::Display) {
        self.metadata.set(format!("meta.{key}"), value);
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.raw(&format!("meta.{key}"))
    }

    /// Unfrozen predictor; fails unless every expected tensor is present
    /// with the expected shape.
    pub fn to_nima(&self) -> Result<NimaModel> {
        self.expect_kind(ModelKind::Nima)?;
        let config = NimaConfig::from_kv(&self.metadata, MODEL_PREFIX)?;
        let mut model = build_tiny_nima(config, 0)?;
        model.params = self.matched_params(&model.params)?;
        Ok(model)
    }

    pub fn to_can(&self) -> Result<CanModel> {
        self.expect_kind(ModelKind::Can)?;
        let config = CanConfig::from_kv(&self.metadata, MODEL_PREFIX)?;
        let mut model = build_can(config, 0)?;
        model.params = self.matched_params(&model.params)?;
        Ok(model)
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidParameter(format!("checkpoint holds a {} model, expected {kind}", self.kind)));
        }
        Ok(())
    }

    fn matched_params(&self, template: &ParamSet) -> Result<ParamSet> {
        for name in self.tensors.names() {
            if template.get(name).is_none() {
                return Err(Error::Corrupt(format!("unexpected tensor `{name}`")));
            }
        }
        let mut out = ParamSet::new();
        for (name, t) in template.iter() {
            let stored = self.tensors.get(name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if stored.shape() != t.shape() {
                return Err(Error::Corrupt(format!(
                    "tensor `{name}` has shape {:?}, architecture expects {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
            out.insert(name.clone(), stored.clone());
        }
        Ok(out)
    }

    fn manifest(&self) -> KvConfig {
        let mut m = self.metadata.clone();
        m.set("format_version", FORMAT_VERSION);
        m.set("kind", self.kind);
        m.set("dtype", self.dtype);
        let mut offset = 0;
        for (name, t) in self.tensors.iter() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            m.set(format!("tensor.{name}"), format!("{}@{offset}", dims.join("x")));
            offset += t.numel();
        }
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = self.manifest().to_text();
        let mut out = Vec::with_capacity(16 + manifest.len() + self.tensors.count() * self.dtype.width());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for (_, t) in self.tensors.iter() {
            for &x in t.data() {
                match self.dtype {
                    Dtype::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                    Dtype::F64 => out.extend_from_slice(&x.to_le_bytes()),
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(if MAGIC.starts_with(bytes) {
                Error::Corrupt("truncated before the magic bytes end".into())
            } else {
                Error::VersionMismatch("not a checkpoint (bad magic)".into())
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::VersionMismatch(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(MAGIC),
                String::from_utf8_lossy(&bytes[..8])
            )));
        }
        if bytes.len() < 16 {
            return Err(Error::Corrupt("truncated header".into()));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc.try_into().expect("four bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Corrupt("checksum mismatch (truncated or modified file)".into()));
        }
        let len = u32::from_le_bytes(body[8..12].try_into().expect("four bytes")) as usize;
        let manifest_end = 12usize.checked_add(len).filter(|&e| e <= body.len());
        let manifest_end = manifest_end.ok_or_else(|| Error::Corrupt("manifest length exceeds file".into()))?;
        let text = std::str::from_utf8(&body[12..manifest_end])
            .map_err(|_| Error::Corrupt("manifest is not UTF-8".into()))?;
        let manifest = KvConfig::parse(text).map_err(|e| Error::Corrupt(format!("manifest: {e}")))?;
        let version: u32 = manifest
            .get("format_version")
            .map_err(|e| Error::Corrupt(e.to_string()))?
            .ok_or_else(|| Error::Corrupt("manifest lacks format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch(format!("format version {version}, supported {FORMAT_VERSION}")));
        }
        let kind: ModelKind = manifest.get("kind")?.ok_or_else(|| Error::Corrupt("manifest lacks kind".into()))?;
        let dtype: Dtype = manifest
            .get("dtype")
            .map_err(|e| Error::Corrupt(e.to_string()))?
            .ok_or_else(|| Error::Corrupt("manifest lacks dtype".into()))?;
        let payload = &body[manifest_end..];
        let width = dtype.width();

        let mut tensors = ParamSet::new();
        let mut metadata = KvConfig::new();
        let mut expected_offset = 0usize;
        for (key, value) in manifest.iter() {
            if let Some(name) = key.strip_prefix("tensor.") {
                let (shape, offset) = parse_tensor_entry(value).ok_or_else(|| Error::Corrupt(format!("bad tensor entry `{key}={value}`")))?;
                let numel: usize = shape.iter().product();
                if offset != expected_offset {
                    return Err(Error::Corrupt(format!("tensor `{name}` at offset {offset}, expected {expected_offset}")));
                }
                let start = offset * width;
                let end = start + numel * width;
                if end > payload.len() {
                    return Err(Error::Corrupt(format!("tensor `{name}` runs past the payload")));
                }
                let data: Vec<f64> = payload[start..end]
                    .chunks_exact(width)
                    .map(|c| match dtype {
                        Dtype::F32 => f32::from_le_bytes(c.try_into().expect("four bytes")) as f64,
                        Dtype::F64 => f64::from_le_bytes(c.try_into().expect("eight bytes")),
                    })
                    .collect();
                let t = Tensor::new(&shape, data).map_err(|e| Error::Corrupt(e.to_string()))?;
                tensors.insert(name, t);
                expected_offset += numel;
            } else if !matches!(key.as_str(), "format_version" | "kind" | "dtype") {
                metadata.set(key.clone(), value);
            }
        }
        if expected_offset * width != payload.len() {
            return Err(Error::Corrupt(format!(
                "payload holds {} bytes, manifest describes {}",
                payload.len(),
                expected_offset * width
            )));
        }
        Ok(Checkpoint { kind, dtype, tensors, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn parse_tensor_entry(value: &str) -> Option<(Vec<usize>, usize)> {
    let (dims, offset) = value.split_once('@')?;
    let shape: Option<Vec<usize>> = dims.split('x').map(|d| d.parse().ok()).collect();
    Some((shape?, offset.parse().ok()?))
}
