//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, `u32` LE version, `u32` LE header length, a JSON
//! header (config, head plan, seed, metadata, layer specs, tensor shapes) and
//! then every parameter tensor as little-endian `f32`, in parameter order.
//! Identical networks serialise to identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerSpec};
use super::{BackboneConfig, HeadPlan, Network};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MMFCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Strategy tag (`single`, `early`, `mimo`, `mimo_kd`, `early_kd`).
    pub strategy: String,
    /// Modality id for single-modality networks.
    #[serde(default)]
    pub modality: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub network: Network,
}

#[derive(Serialize, Deserialize)]
struct Header {
    backbone: BackboneConfig,
    head_plan: HeadPlan,
    seed: u64,
    meta: CheckpointMeta,
    layers: Vec<LayerSpec>,
    tensors: Vec<Vec<usize>>,
}

impl Checkpoint {
    pub fn new(network: Network, meta: CheckpointMeta) -> Self {
        Self { meta, network }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let net = &self.network;
        let header = Header {
            backbone: net.config().clone(),
            head_plan: net.head_plan(),
            seed: net.seed(),
            meta: self.meta.clone(),
            layers: net.layers().iter().map(Layer::spec).collect(),
            tensors: net.params().iter().map(|t| t.shape().to_vec()).collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let n_values: usize = net.params().iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 4 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in net.params() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let header_end = 16 + header_len;
        if bytes.len() < header_end {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
        let layers: Vec<Layer> = header.layers.iter().map(Layer::from_spec).collect();
        let mut network =
            Network::from_layers(header.backbone, header.head_plan, header.seed, layers)?;
        let mut cursor = header_end;
        {
            let mut params = network.params_mut();
            if params.len() != header.tensors.len() {
                return Err(Error::Checkpoint("tensor count mismatch".into()));
            }
            for (p, shape) in params.iter_mut().zip(&header.tensors) {
                if p.shape() != shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "tensor shape {:?} does not match layer {:?}",
                        shape,
                        p.shape()
                    )));
                }
                let n = p.len() * 4;
                let chunk = bytes
                    .get(cursor..cursor + n)
                    .ok_or_else(|| Error::Checkpoint("truncated tensor data".into()))?;
                for (dst, src) in p.data_mut().iter_mut().zip(chunk.chunks_exact(4)) {
                    *dst = f32::from_le_bytes(src.try_into().expect("4 bytes"));
                }
                cursor += n;
            }
        }
        if cursor != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            meta: header.meta,
            network,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
