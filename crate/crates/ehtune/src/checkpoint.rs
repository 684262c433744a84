//! Checkpoint format: JSON with base64-encoded little-endian f32 payloads,
//! names sorted lexicographically, written atomically (temp file + rename).

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{EhError, Result};
use crate::numcore::{ParamStore, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    /// Little-endian f32 bytes, base64.
    pub data: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: BackboneConfig,
    /// BTreeMap keeps names sorted for canonical diffing.
    pub params: BTreeMap<String, TensorRecord>,
}

fn encode_tensor(t: &Tensor) -> TensorRecord {
    let mut bytes = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    TensorRecord { shape: t.shape().to_vec(), data: B64.encode(bytes) }
}

fn decode_tensor(name: &str, rec: &TensorRecord) -> Result<Tensor> {
    let bytes = B64
        .decode(&rec.data)
        .map_err(|e| EhError::Checkpoint(format!("{name}: bad base64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(EhError::Checkpoint(format!("{name}: payload not a multiple of 4 bytes")));
    }
    let data: Vec<f32> =
        bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let expect: usize = rec.shape.iter().product();
    if data.len() != expect {
        return Err(EhError::Checkpoint(format!(
            "{name}: shape {:?} implies {expect} elements, payload has {}",
            rec.shape,
            data.len()
        )));
    }
    Tensor::new(rec.shape.clone(), data)
}

impl Checkpoint {
    pub fn from_backbone(bb: &Backbone) -> Checkpoint {
        let params =
            bb.params.iter().map(|(n, t)| (n.to_string(), encode_tensor(t))).collect();
        Checkpoint { format_version: FORMAT_VERSION, config: bb.cfg.clone(), params }
    }

    pub fn into_backbone(&self) -> Result<Backbone> {
        if self.format_version != FORMAT_VERSION {
            return Err(EhError::Checkpoint(format!(
                "format_version {} unsupported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.config.validate()?;
        // build to get the authoritative name/shape universe, then overwrite
        let mut bb = Backbone::build(self.config.clone(), 0)?;
        let have: Vec<&str> = bb.params.names().collect();
        for name in &have {
            if !self.params.contains_key(*name) {
                return Err(EhError::Checkpoint(format!("checkpoint is missing {name:?}")));
            }
        }
        if self.params.len() != have.len() {
            let extra = self
                .params
                .keys()
                .find(|k| !have.contains(&k.as_str()))
                .cloned()
                .unwrap_or_default();
            return Err(EhError::Checkpoint(format!("unexpected tensor {extra:?} in checkpoint")));
        }
        let mut store = ParamStore::new();
        for (name, _) in bb.params.iter() {
            store.insert(name, decode_tensor(name, &self.params[name])?);
        }
        bb.params.copy_from(&store)?;
        Ok(bb)
    }
}

/// Serialize any value as pretty JSON via temp file + rename, so readers
/// never observe a partial write.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            d.join(format!(
                ".{}.tmp",
                path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
            ))
        }
        None => Path::new(".tmp.write").to_path_buf(),
    };
    std::fs::write(&tmp, json)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_backbone(path: &Path, bb: &Backbone) -> Result<()> {
    write_json_atomic(path, &Checkpoint::from_backbone(bb))
}

pub fn load_backbone(path: &Path) -> Result<Backbone> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EhError::Checkpoint(format!("{}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    ckpt.into_backbone()
}
