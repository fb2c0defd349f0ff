//! Binary checkpoint container.
//!
//! Layout: `SHMD`, u32 LE format version, u32 LE header length, a UTF-8 JSON
//! header, then the payload of little-endian `f32` values. Manifest offsets
//! are byte offsets into the payload.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataprep::NormState;
use crate::layers::{LayerError, Network, NetworkConfig};
use crate::scalar::Scalar;
use crate::series::write_atomic;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SHMD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {found}, expected {FORMAT_VERSION}")]
    Version { found: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("inconsistent manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    net_config: NetworkConfig,
    norm_state: NormState,
    manifest: Vec<ManifestEntry>,
    payload_bytes: usize,
}

/// Trained parameters in storage precision plus everything needed to run them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub net_config: NetworkConfig,
    pub norm_state: NormState,
    pub manifest: Vec<ManifestEntry>,
    pub payload: Vec<f32>,
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(net: &Network<T>, norm_state: NormState) -> Self {
        let mut manifest = Vec::new();
        let mut payload = Vec::with_capacity(net.param_count());
        for (name, t) in net.named_params() {
            manifest.push(ManifestEntry {
                name,
                shape: t.shape().to_vec(),
                offset: payload.len() * 4,
            });
            payload.extend(t.data().iter().map(|v| v.to_f64_lossless() as f32));
        }
        Checkpoint {
            version: FORMAT_VERSION,
            net_config: net.config().clone(),
            norm_state,
            manifest,
            payload,
        }
    }

    /// Rebuilds the network, widening from the stored `f32` values.
    pub fn network<T: Scalar>(&self) -> Result<Network<T>, CheckpointError> {
        let mut named = Vec::with_capacity(self.manifest.len());
        for e in &self.manifest {
            let start = e.offset / 4;
            let len: usize = e.shape.iter().product();
            let data = self
                .payload
                .get(start..start + len)
                .ok_or_else(|| CheckpointError::Manifest(format!("{} lies outside the payload", e.name)))?
                .iter()
                .map(|&v| T::of(v as f64))
                .collect();
            let t = Tensor::new(e.shape.clone(), data).map_err(LayerError::from)?;
            named.push((e.name.clone(), t));
        }
        Ok(Network::from_named(&self.net_config, named)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            net_config: self.net_config.clone(),
            norm_state: self.norm_state.clone(),
            manifest: self.manifest.clone(),
            payload_bytes: self.payload.len() * 4,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + self.payload.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 12 {
            return Err(CheckpointError::Truncated("file ends inside the preamble".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let header_len = word(8) as usize;
        let body = &bytes[12..];
        if body.len() < header_len {
            return Err(CheckpointError::Truncated(format!(
                "header declares {header_len} bytes, {} available",
                body.len()
            )));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let raw = &body[header_len..];
        if raw.len() < header.payload_bytes {
            return Err(CheckpointError::Truncated(format!(
                "payload declares {} bytes, {} available",
                header.payload_bytes,
                raw.len()
            )));
        }
        if raw.len() > header.payload_bytes || !header.payload_bytes.is_multiple_of(4) {
            return Err(CheckpointError::Manifest(format!(
                "payload length {} does not match declared {}",
                raw.len(),
                header.payload_bytes
            )));
        }
        validate_manifest(&header.manifest, header.payload_bytes)?;
        let payload = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let ckpt = Checkpoint {
            version,
            net_config: header.net_config,
            norm_state: header.norm_state,
            manifest: header.manifest,
            payload,
        };
        // shape agreement with the configuration is part of a well-formed file
        ckpt.network::<f32>().map_err(|e| match e {
            CheckpointError::Layer(l) => CheckpointError::Manifest(l.to_string()),
            other => other,
        })?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        write_atomic(path.as_ref(), &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn validate_manifest(manifest: &[ManifestEntry], payload_bytes: usize) -> Result<(), CheckpointError> {
    let mut spans = Vec::with_capacity(manifest.len());
    for e in manifest {
        if e.offset % 4 != 0 {
            return Err(CheckpointError::Manifest(format!(
                "{} offset {} is not 4-byte aligned",
                e.name, e.offset
            )));
        }
        let bytes = e.shape.iter().product::<usize>() * 4;
        let end = e.offset.checked_add(bytes).filter(|&end| end <= payload_bytes);
        let Some(end) = end else {
            return Err(CheckpointError::Manifest(format!(
                "{} spans bytes {}..{} beyond payload of {payload_bytes}",
                e.name,
                e.offset,
                e.offset.saturating_add(bytes)
            )));
        };
        spans.push((e.offset, end, e.name.as_str()));
    }
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(CheckpointError::Manifest(format!("{} overlaps {}", w[0].2, w[1].2)));
        }
    }
    Ok(())
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Activation, DenseSpec};

    fn tiny() -> Checkpoint {
        let cfg = NetworkConfig {
            input_channels: 1,
            window: 3,
            horizon: 1,
            target_channels: 1,
            conv: vec![],
            recurrent: vec![],
            attention: false,
            dense: vec![DenseSpec {
                width: 2,
                activation: Activation::Relu,
            }],
        };
        let net = Network::<f64>::init(&cfg, 4).unwrap();
        let norm = NormState {
            min: vec![-1.0],
            max: vec![1.0],
            degenerate: vec![false],
            fitted_on: 0..10,
        };
        Checkpoint::from_network(&net, norm)
    }

    #[test]
    fn bytes_round_trip() {
        let c = tiny();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_magic() {
        let mut b = tiny().to_bytes();
        b[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&b), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn version_mismatch() {
        let mut b = tiny().to_bytes();
        b[4] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&b),
            Err(CheckpointError::Version { found: 2 })
        ));
    }

    #[test]
    fn truncated_payload() {
        let b = tiny().to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&b[..b.len() - 3]),
            Err(CheckpointError::Truncated(_))
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&b[..20]),
            Err(CheckpointError::Truncated(_))
        ));
    }

    #[test]
    fn out_of_bounds_offset() {
        let mut c = tiny();
        c.manifest[0].offset = c.payload.len() * 4;
        assert!(matches!(
            Checkpoint::from_bytes(&c.to_bytes()),
            Err(CheckpointError::Manifest(_))
        ));
    }

    #[test]
    fn overlapping_entries() {
        let mut c = tiny();
        c.manifest[1].offset = 0;
        let err = Checkpoint::from_bytes(&c.to_bytes()).unwrap_err();
        assert!(err.to_string().contains("overlaps"), "{err}");
    }

    #[test]
    fn shape_inconsistent_with_config() {
        let mut c = tiny();
        c.manifest[0].shape = vec![1, 3];
        let err = Checkpoint::from_bytes(&c.to_bytes()).unwrap_err();
        assert!(matches!(err, CheckpointError::Manifest(_)), "{err}");
    }
}
