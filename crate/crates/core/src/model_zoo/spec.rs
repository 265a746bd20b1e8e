use serde::{Deserialize, Serialize};

use super::idx::InputPrecision;
use crate::error::{invalid, Result};
use crate::quant::{BitNoisePolicy, NoiseDist};
use crate::tensor::conv_out_extent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv2d,
}

/// Quantization of the first and last layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    #[default]
    Quantize,
    KeepFp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerKind {
    #[default]
    Nipq,
    MinMax,
}

fn one() -> usize {
    1
}

fn three() -> usize {
    3
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Output features (dense) or channels (conv).
    pub out: usize,
    #[serde(default = "three")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub pad: usize,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default)]
    pub relu: bool,
    /// Global average pool after this layer (conv only).
    #[serde(default)]
    pub global_pool: bool,
    /// Overrides the edge policy for this layer.
    #[serde(default)]
    pub quantize: Option<bool>,
    /// Fixed per-feature (dense) or per-channel (conv) factors multiplying the
    /// layer input before its activation quantizer.
    #[serde(default)]
    pub input_gain: Option<Vec<f64>>,
}

impl LayerSpec {
    pub fn dense(out: usize, relu: bool) -> Self {
        Self {
            kind: LayerKind::Dense,
            out,
            kernel: 1,
            stride: 1,
            pad: 0,
            batch_norm: false,
            relu,
            global_pool: false,
            quantize: None,
            input_gain: None,
        }
    }

    /// 3x3, stride 1, pad 1, batch norm and ReLU.
    pub fn conv_bn_relu(out: usize) -> Self {
        Self {
            kind: LayerKind::Conv2d,
            out,
            kernel: 3,
            stride: 1,
            pad: 1,
            batch_norm: true,
            relu: true,
            global_pool: false,
            quantize: None,
            input_gain: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Shape of one sample: `[features]` or `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub first_last: EdgePolicy,
    #[serde(default)]
    pub input_precision: InputPrecision,
    /// The first activation quantizer uses a signed grid (raw inputs may be
    /// negative); every other activation quantizer is unsigned.
    #[serde(default)]
    pub signed_input: bool,
    #[serde(default)]
    pub quantizer: QuantizerKind,
    #[serde(default = "yes")]
    pub quantize_weights: bool,
    #[serde(default = "yes")]
    pub quantize_activations: bool,
    #[serde(default)]
    pub noise_dist: NoiseDist,
    #[serde(default)]
    pub bit_noise_policy: BitNoisePolicy,
    /// Initial `bit_raw`; 0 gives 8 bits.
    #[serde(default)]
    pub init_bit_raw: f64,
}

/// Per-sample shapes around one layer, as resolved by [`NetworkSpec::resolve`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct LayerShapes {
    pub input: Vec<usize>,
    pub in_features: usize,
    /// Output before pooling.
    pub output: Vec<usize>,
    /// Output after pooling.
    pub next: Vec<usize>,
    pub macs: u64,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        Self {
            input_shape,
            layers,
            first_last: EdgePolicy::default(),
            input_precision: InputPrecision::default(),
            signed_input: false,
            quantizer: QuantizerKind::default(),
            quantize_weights: true,
            quantize_activations: true,
            noise_dist: NoiseDist::default(),
            bit_noise_policy: BitNoisePolicy::default(),
            init_bit_raw: 0.0,
        }
    }

    /// Dense ReLU stack ending in a linear head.
    pub fn mlp(input: usize, hidden: &[usize], outputs: usize) -> Self {
        let mut layers: Vec<LayerSpec> = hidden.iter().map(|&h| LayerSpec::dense(h, true)).collect();
        layers.push(LayerSpec::dense(outputs, false));
        Self::new(vec![input], layers)
    }

    /// 784-256-128-10.
    pub fn default_mlp() -> Self {
        Self::mlp(784, &[256, 128], 10)
    }

    /// Three conv-bn-relu blocks, global average pool, dense head.
    pub fn small_cnn(input: [usize; 3], channels: [usize; 3], classes: usize) -> Self {
        let mut layers: Vec<LayerSpec> = channels.iter().map(|&c| LayerSpec::conv_bn_relu(c)).collect();
        layers[2].global_pool = true;
        layers.push(LayerSpec::dense(classes, false));
        let mut s = Self::new(input.to_vec(), layers);
        s.input_precision = InputPrecision::Fixed8bit;
        s
    }

    /// dense-relu-dense on a scalar input.
    pub fn tiny_regressor(hidden: usize) -> Self {
        Self::mlp(1, &[hidden], 1)
    }

    pub fn with_edges(mut self, policy: EdgePolicy) -> Self {
        self.first_last = policy;
        self
    }

    pub fn with_quantizer(mut self, kind: QuantizerKind) -> Self {
        self.quantizer = kind;
        self
    }

    /// Whether layer `i` gets quantizers.
    pub fn quantized(&self, i: usize) -> bool {
        let edge = i == 0 || i + 1 == self.layers.len();
        self.layers[i].quantize.unwrap_or(!(edge && self.first_last == EdgePolicy::KeepFp))
    }

    /// Checks that shapes chain and computes per-layer shapes.
    pub(crate) fn resolve(&self) -> Result<Vec<LayerShapes>> {
        if self.layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(invalid(format!("bad input shape {:?}", self.input_shape)));
        }
        let mut cur = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            if l.out == 0 {
                return Err(invalid(format!("layer {i}: zero outputs")));
            }
            let (output, in_features, macs) = match l.kind {
                LayerKind::Dense => {
                    let fin: usize = cur.iter().product();
                    (vec![l.out], fin, (fin * l.out) as u64)
                }
                LayerKind::Conv2d => {
                    let &[c, h, w] = cur.as_slice() else {
                        return Err(invalid(format!("layer {i}: conv2d needs a [C, H, W] input, got {cur:?}")));
                    };
                    let (ho, wo) =
                        conv_out_extent(h, w, l.kernel, l.kernel, l.stride, l.pad).map_err(|e| invalid(format!("layer {i}: {e}")))?;
                    let macs = (l.out * c * l.kernel * l.kernel * ho * wo) as u64;
                    (vec![l.out, ho, wo], c, macs)
                }
            };
            if let Some(g) = &l.input_gain {
                if g.len() != in_features {
                    return Err(invalid(format!(
                        "layer {i}: input_gain has {} entries, layer takes {in_features}",
                        g.len()
                    )));
                }
                if let Some(v) = g.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                    return Err(invalid(format!("layer {i}: input_gain entries must be positive, got {v}")));
                }
            }
            if l.global_pool && l.kind != LayerKind::Conv2d {
                return Err(invalid(format!("layer {i}: global_pool needs a conv layer")));
            }
            let next = if l.global_pool { vec![l.out] } else { output.clone() };
            out.push(LayerShapes {
                input: cur.clone(),
                in_features,
                output,
                next: next.clone(),
                macs,
            });
            cur = next;
        }
        Ok(out)
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.resolve()?.last().map(|s| s.next.clone()).unwrap_or_default())
    }
}
