//! Binary checkpoints: magic, `u64` header length, JSON header, then one
//! little-endian blob per named tensor (parameters, then Adam moments).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{ModelConfig, RadianceField};
use crate::geometry::SceneBounds;
use crate::optim::AdamState;
use crate::params::{Parameters, TensorClass};
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"HFIELDv1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub class: TensorClass,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dtype: String,
    /// Fully resolved model config (vertical scale already applied).
    pub model: ModelConfig,
    pub bounds: SceneBounds<f64>,
    pub appearance_rows: usize,
    pub step: u64,
    pub has_adam: bool,
    pub tensors: Vec<TensorEntry>,
    /// Free-form run metadata (typically the resolved run config).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub field: RadianceField<T>,
    pub adam: Option<AdamState<T>>,
}

/// The model config that rebuilds `field` exactly, without re-deriving the
/// vertical scale.
pub fn resolved_model(config: &ModelConfig, field: &RadianceField<impl Real>) -> ModelConfig {
    let mut m = config.clone();
    if let Some(p) = field.foreground.encoder.planes() {
        m.planes.vertical_scale = p.config.vertical_scale;
    }
    m.auto_vertical_scale = false;
    m
}

pub fn save_checkpoint<T: Real>(
    path: &Path,
    config: &ModelConfig,
    bounds: &SceneBounds<f64>,
    field: &RadianceField<T>,
    adam: Option<&AdamState<T>>,
    meta: serde_json::Value,
) -> Result<(), CheckpointError> {
    let tensors = field.tensors("");
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        model: resolved_model(config, field),
        bounds: *bounds,
        appearance_rows: field.appearance.count(),
        step: adam.map_or(0, |a| a.step),
        has_adam: adam.is_some(),
        tensors: tensors.iter().map(|t| TensorEntry { name: t.name.clone(), class: t.class, len: t.data.len() }).collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let total: usize = tensors.iter().map(|t| t.data.len()).sum::<usize>() * if adam.is_some() { 3 } else { 1 };
    let mut buf = Vec::with_capacity(16 + json.len() + total * T::BYTES);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in &tensors {
        t.data.iter().for_each(|v| v.write_le(&mut buf));
    }
    if let Some(a) = adam {
        for blob in a.m.iter().chain(&a.v) {
            blob.iter().for_each(|v| v.write_le(&mut buf));
        }
    }
    // write-then-rename so a crash never leaves a truncated checkpoint
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_header(path: &Path) -> Result<(CheckpointHeader, Vec<u8>, usize), CheckpointError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::Incompatible("missing checkpoint magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| CheckpointError::Corrupt("header length".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| CheckpointError::Incompatible(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(CheckpointError::Incompatible(format!("format version {}", header.version)));
    }
    Ok((header, bytes, body))
}

fn read_blob<T: Real>(bytes: &[u8], pos: &mut usize, width: usize, f64_src: bool, out: &mut [T]) -> Result<(), CheckpointError> {
    let end = *pos + out.len() * width;
    if end > bytes.len() {
        return Err(CheckpointError::Corrupt("truncated tensor data".into()));
    }
    for (i, v) in out.iter_mut().enumerate() {
        let b = &bytes[*pos + i * width..];
        *v = if width == T::BYTES {
            T::read_le(b)
        } else if f64_src {
            T::lit(f64::read_le(b))
        } else {
            T::lit(f32::read_le(b) as f64)
        };
    }
    *pos = end;
    Ok(())
}

/// Loads a checkpoint into a model of scalar type `T` (converting if the
/// stored width differs).
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    let (header, bytes, mut pos) = read_header(path)?;
    let (width, f64_src) = match header.dtype.as_str() {
        "f32" => (4, false),
        "f64" => (8, true),
        other => return Err(CheckpointError::Incompatible(format!("dtype {other}"))),
    };
    header.model.validate().map_err(CheckpointError::Incompatible)?;
    let mut field = RadianceField::<T>::new(&header.model, &header.bounds.cast(), header.appearance_rows, 0);
    {
        let mut tensors = field.tensors_mut("");
        if tensors.len() != header.tensors.len() {
            return Err(CheckpointError::Incompatible("tensor count differs from model config".into()));
        }
        for (t, e) in tensors.iter_mut().zip(&header.tensors) {
            if t.name != e.name || t.data.len() != e.len {
                return Err(CheckpointError::Incompatible(format!("tensor {} does not match model config", e.name)));
            }
            read_blob(&bytes, &mut pos, width, f64_src, t.data)?;
        }
    }
    let adam = if header.has_adam {
        let mut a = AdamState::new(&field);
        a.step = header.step;
        for blob in a.m.iter_mut().chain(a.v.iter_mut()) {
            read_blob(&bytes, &mut pos, width, f64_src, blob)?;
        }
        Some(a)
    } else {
        None
    };
    if pos != bytes.len() {
        return Err(CheckpointError::Corrupt("trailing bytes after tensor data".into()));
    }
    Ok(Checkpoint { header, field, adam })
}
