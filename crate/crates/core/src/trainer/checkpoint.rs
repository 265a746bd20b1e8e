//! Checkpoints: a JSON manifest plus a flat little-endian f32 blob.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model_zoo::{Network, NetworkSpec};
use crate::quant::{QuantMode, Quantizer};
use crate::Scalar;

pub const FORMAT: &str = "nipq-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerEntry {
    pub name: String,
    pub mode: QuantMode,
    pub frozen_bit: Option<u32>,
    /// Min-max quantizers only.
    #[serde(default)]
    pub frozen_range: Option<(f32, f32)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub spec: NetworkSpec,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub blob_bytes: usize,
    pub tensors: Vec<TensorEntry>,
    pub quantizers: Vec<QuantizerEntry>,
    /// Optimizer moments are not stored; resuming restarts them.
    pub optimizer_state: bool,
    /// Free-form provenance (config hash, seed, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, manifest_path: impl AsRef<Path>, meta: serde_json::Value) -> Result<Manifest> {
    let manifest_path = manifest_path.as_ref();
    let blob_file = blob_path(manifest_path);
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for p in net.named_params() {
        let data = p.tensor.to_vec();
        let offset = blob.len();
        for v in &data {
            blob.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: p.name,
            shape: p.tensor.shape().to_vec(),
            offset,
            bytes: blob.len() - offset,
        });
    }
    let quantizers = net
        .quantizers()
        .into_iter()
        .map(|(name, _, q)| QuantizerEntry {
            name,
            mode: q.mode(),
            frozen_bit: q.frozen_bit(),
            frozen_range: match q {
                Quantizer::MinMax(m) => m.frozen_range().map(|(a, b)| (a.as_f32(), b.as_f32())),
                Quantizer::Nipq(_) => None,
            },
        })
        .collect();
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        spec: net.spec.clone(),
        blob: blob_file.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        blob_bytes: blob.len(),
        tensors,
        quantizers,
        optimizer_state: false,
        meta,
    };
    write_atomic(&blob_file, &blob)?;
    write_atomic(manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let m: Manifest = serde_json::from_slice(&std::fs::read(path)?)?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(ck(format!(
            "unsupported format {} v{}, expected {FORMAT} v{VERSION}",
            m.format, m.version
        )));
    }
    Ok(m)
}

/// Rebuilds the network described by the manifest and fills in every tensor.
pub fn load_checkpoint<T: Scalar>(manifest_path: impl AsRef<Path>) -> Result<(Network<T>, Manifest)> {
    let manifest_path = manifest_path.as_ref();
    let m = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let blob = std::fs::read(dir.join(&m.blob))?;
    let net = Network::build(&m.spec, 0)?;
    restore(&net, &m, &blob)?;
    let mut net = net;
    apply_quantizer_state(&mut net, &m)?;
    Ok((net, m))
}

fn restore<T: Scalar>(net: &Network<T>, m: &Manifest, blob: &[u8]) -> Result<()> {
    if blob.len() != m.blob_bytes {
        return Err(ck(format!("blob holds {} bytes, manifest expects {}", blob.len(), m.blob_bytes)));
    }
    // Offsets must tile the blob with no gaps or overlaps.
    let mut cursor = 0;
    for e in &m.tensors {
        if e.offset != cursor || e.bytes != 4 * e.shape.iter().product::<usize>() {
            return Err(ck(format!("tensor {} does not tile the blob at byte {cursor}", e.name)));
        }
        cursor += e.bytes;
    }
    if cursor != m.blob_bytes {
        return Err(ck(format!("tensors cover {cursor} bytes of {}", m.blob_bytes)));
    }
    let by_name: HashMap<&str, &TensorEntry> = m.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    if by_name.len() != m.tensors.len() {
        return Err(ck("manifest lists a tensor twice"));
    }
    let params = net.named_params();
    for p in &params {
        let e = by_name
            .get(p.name.as_str())
            .ok_or_else(|| ck(format!("tensor {} missing from checkpoint", p.name)))?;
        if e.shape != p.tensor.shape() {
            return Err(ck(format!(
                "tensor {} has shape {:?} in checkpoint, network expects {:?}",
                p.name,
                e.shape,
                p.tensor.shape()
            )));
        }
        let data = blob[e.offset..e.offset + e.bytes]
            .chunks_exact(4)
            .map(|c| <T as Scalar>::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        p.tensor.set_data(data)?;
    }
    if params.len() != m.tensors.len() {
        let known: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
        let extra = m.tensors.iter().find(|e| !known.contains(&e.name.as_str()));
        return Err(ck(format!(
            "checkpoint has tensor {} unknown to the network",
            extra.map_or("?", |e| e.name.as_str())
        )));
    }
    Ok(())
}

fn apply_quantizer_state<T: Scalar>(net: &mut Network<T>, m: &Manifest) -> Result<()> {
    let mut qs = net.quantizers_mut();
    if qs.len() != m.quantizers.len() {
        return Err(ck(format!(
            "checkpoint has {} quantizers, network has {}",
            m.quantizers.len(),
            qs.len()
        )));
    }
    for ((name, _, q), e) in qs.iter_mut().zip(&m.quantizers) {
        if *name != e.name {
            return Err(ck(format!("quantizer {} found where {} was expected", e.name, name)));
        }
        q.set_mode(e.mode);
        match q {
            Quantizer::Nipq(p) => p.set_frozen_bit(e.frozen_bit),
            Quantizer::MinMax(p) => {
                p.set_frozen_bit(e.frozen_bit);
                p.set_frozen_range(
                    e.frozen_range
                        .map(|(a, b)| (<T as Scalar>::from_f32(a), <T as Scalar>::from_f32(b))),
                );
            }
        }
    }
    Ok(())
}
