//! Deployable export: integer codes for quantized weights, raw f32 for
//! everything else, and a JSON manifest with each grid's (alpha, bit).
//!
//! Dequantizing a code as `code as f32 * step` reproduces the quantization
//! mode weight bit for bit, since both compute `round(clamp(w / step)) * step`
//! in f32 with the same `step = alpha / hi`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use nipq::io::write_atomic;
use nipq::model_zoo::{Network, ParamKind};
use nipq::quant::{level_range, QuantMode, Quantizer};
use nipq::tensor::no_grad;

use crate::report::Provenance;
use crate::CliError;

pub const FORMAT: &str = "nipq-export";
pub const VERSION: u32 = 1;

/// Tensors by parameter name.
pub type NamedValues = Vec<(String, Vec<f32>)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    I8,
    I16,
    F32,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::I8 => 1,
            Dtype::I16 => 2,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub alpha: f32,
    pub bit: u32,
    pub signed: bool,
    /// `alpha / hi`; zero for a collapsed boundary.
    pub step: f32,
    pub lo: i64,
    pub hi: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    /// Byte range in the blob.
    pub offset: usize,
    pub bytes: usize,
    /// Present for integer codes.
    pub grid: Option<Grid>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportManifest {
    pub format: String,
    pub version: u32,
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub blob: String,
    pub tensors: Vec<ExportTensor>,
    /// Activation grids, keyed by quantizer name.
    pub activations: Vec<(String, Grid)>,
}

fn grid(q: &Quantizer<f32>, name: &str) -> Result<Grid, CliError> {
    let Quantizer::Nipq(p) = q else {
        return Err(CliError::Runtime(format!(
            "{name}: export supports truncation quantizers only, not min-max"
        )));
    };
    let bit = p.quant_bit();
    let (lo, hi) = level_range(bit, p.signed).map_err(|e| CliError::Runtime(format!("{name}: {e}")))?;
    let alpha = p.alpha_value();
    Ok(Grid {
        alpha,
        bit,
        signed: p.signed,
        step: alpha / hi as f32,
        lo,
        hi,
    })
}

fn codes(w: &[f32], g: &Grid) -> Vec<i64> {
    if g.alpha == 0.0 {
        return vec![0; w.len()];
    }
    w.iter()
        .map(|&x| (x / g.step).clamp(g.lo as f32, g.hi as f32).round() as i64)
        .collect()
}

/// Writes `<path>` (manifest) and its `.bin` blob.
pub fn export_network(net: &Network<f32>, path: &Path, prov: &Provenance) -> Result<ExportManifest, CliError> {
    let blob_path = path.with_extension("bin");
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for p in net.named_params() {
        if p.kind.is_quantizer() {
            continue;
        }
        let data = p.tensor.to_vec();
        let offset = blob.len();
        let block: Option<usize> = p
            .name
            .strip_prefix('l')
            .and_then(|s| s.split('.').next())
            .and_then(|s| s.parse().ok());
        let wq = match (p.kind, block) {
            (ParamKind::Weight, Some(i)) => net.blocks[i].layer.w_quant.as_ref(),
            _ => None,
        };
        let (dtype, g) = match wq {
            Some(q) => {
                let g = grid(q, &p.name)?;
                let dtype = if g.bit <= 8 { Dtype::I8 } else { Dtype::I16 };
                for c in codes(&data, &g) {
                    match dtype {
                        Dtype::I8 => blob.extend_from_slice(&(c as i8).to_le_bytes()),
                        _ => blob.extend_from_slice(&(c as i16).to_le_bytes()),
                    }
                }
                (dtype, Some(g))
            }
            None => {
                for v in &data {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
                (Dtype::F32, None)
            }
        };
        tensors.push(ExportTensor {
            name: p.name,
            shape: p.tensor.shape().to_vec(),
            dtype,
            offset,
            bytes: blob.len() - offset,
            grid: g,
        });
    }
    let mut activations = Vec::new();
    for (i, b) in net.blocks.iter().enumerate() {
        if let Some(q) = &b.layer.a_quant {
            let name = format!("l{i}.a_quant");
            activations.push((name.clone(), grid(q, &name)?));
        }
    }
    let m = ExportManifest {
        format: FORMAT.into(),
        version: VERSION,
        run_id: prov.run_id.clone(),
        config_hash: prov.config_hash.clone(),
        seed: prov.seed,
        blob: blob_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        tensors,
        activations,
    };
    let rt = |e: nipq::Error| CliError::Runtime(e.to_string());
    write_atomic(&blob_path, &blob).map_err(rt)?;
    let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(path, text.as_bytes()).map_err(rt)?;
    Ok(m)
}

/// Reads an export and returns every tensor as f32 (codes times step).
pub fn load_export(path: &Path) -> Result<(ExportManifest, NamedValues), CliError> {
    let bad = |msg: String| CliError::Runtime(format!("{}: {msg}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let m: ExportManifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(bad(format!("unsupported format {} v{}", m.format, m.version)));
    }
    let blob = std::fs::read(path.parent().unwrap_or(Path::new(".")).join(&m.blob)).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    for t in &m.tensors {
        let n: usize = t.shape.iter().product();
        let w = t.dtype.width();
        if t.bytes != n * w || t.offset + t.bytes > blob.len() {
            return Err(bad(format!("tensor {} has an inconsistent byte range", t.name)));
        }
        let raw = &blob[t.offset..t.offset + t.bytes];
        let vals: Vec<f32> = match (t.dtype, &t.grid) {
            (Dtype::F32, _) => raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
            (Dtype::I8, Some(g)) => raw.iter().map(|&b| i8::from_le_bytes([b]) as f32 * g.step).collect(),
            (Dtype::I16, Some(g)) => raw
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 * g.step)
                .collect(),
            _ => return Err(bad(format!("tensor {} has integer codes but no grid", t.name))),
        };
        out.push((t.name.clone(), vals));
    }
    Ok((m, out))
}

/// Weights as the quantization-mode forward sees them, per quantized layer.
pub fn quant_mode_weights(net: &Network<f32>) -> Result<NamedValues, CliError> {
    let mut q = net.clone();
    q.set_mode(QuantMode::Quant);
    let mut out = Vec::new();
    for (i, b) in q.blocks.iter().enumerate() {
        if b.layer.w_quant.is_some() {
            let w = no_grad(|| b.layer.effective_weight(None, false)).map_err(|e| CliError::Runtime(e.to_string()))?;
            out.push((format!("l{i}.weight"), w.to_vec()));
        }
    }
    Ok(out)
}

/// Overwrites the network's tensors with an export's values.
pub fn apply_export(net: &Network<f32>, tensors: &[(String, Vec<f32>)]) -> Result<(), CliError> {
    let params = net.named_params();
    for (name, vals) in tensors {
        let p = params
            .iter()
            .find(|p| &p.name == name)
            .ok_or_else(|| CliError::Config(format!("export tensor {name} is not in the network")))?;
        p.tensor
            .set_data(vals.clone())
            .map_err(|e| CliError::Config(format!("{name}: {e}")))?;
    }
    Ok(())
}
