use super::data::{Dataset, Targets};
use super::idx::InputPrecision;
use super::spec::{LayerKind, LayerSpec, NetworkSpec, QuantizerKind};
use crate::constraints::LayerCost;
use crate::error::{invalid, Error, Result};
use crate::quant::{alpha_to_raw, MinMaxQuant, Noise, QuantMode, QuantParams, Quantizer, TensorRole};
use crate::rng::RngStream;
use crate::tensor::{no_grad, Tensor};
use crate::Scalar;

/// Bit-width assumed for tensors left in full precision.
pub const FP_BITS: u32 = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BnMode {
    /// Normalize with running statistics.
    Running,
    /// Normalize with batch statistics, leave running statistics alone.
    Batch,
    /// Normalize with batch statistics and blend them into the running ones.
    Update { momentum: f64 },
}

/// Per-call forward options.
pub struct Forward<'a> {
    pub bn: BnMode,
    /// Noise source for noise-mode quantizers; `None` forces zero noise.
    pub rng: Option<&'a mut RngStream>,
    /// Skip every quantizer (full-precision pass).
    pub bypass_quant: bool,
}

impl<'a> Forward<'a> {
    pub fn eval() -> Self {
        Self {
            bn: BnMode::Running,
            rng: None,
            bypass_quant: false,
        }
    }

    pub fn train(rng: &'a mut RngStream) -> Self {
        Self {
            bn: BnMode::Update { momentum: 0.1 },
            rng: Some(rng),
            bypass_quant: false,
        }
    }

    pub fn full_precision(mut self) -> Self {
        self.bypass_quant = true;
        self
    }

    pub fn with_bn(mut self, bn: BnMode) -> Self {
        self.bn = bn;
        self
    }
}

fn noise_source<'b, T: Scalar>(rng: Option<&'b mut RngStream>) -> Noise<'b, T> {
    match rng {
        Some(r) => Noise::Rng(r),
        None => Noise::Zero,
    }
}

#[derive(Debug)]
pub struct QuantLayer<T: Scalar> {
    pub kind: LayerKind,
    /// `[out, in]` or `[out, in_ch, k, k]`.
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    /// Signed.
    pub w_quant: Option<Quantizer<T>>,
    /// Quantizes this layer's input; unsigned except on a signed-input first layer.
    pub a_quant: Option<Quantizer<T>>,
    pub cost: LayerCost,
    pub stride: usize,
    pub pad: usize,
    /// `[in]` for dense, `[in_ch, 1, 1]` for conv.
    pub input_gain: Option<Tensor<T>>,
}

impl<T: Scalar> Clone for QuantLayer<T> {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            weight: self.weight.deep_clone(),
            bias: self.bias.as_ref().map(Tensor::deep_clone),
            w_quant: self.w_quant.clone(),
            a_quant: self.a_quant.clone(),
            cost: self.cost,
            stride: self.stride,
            pad: self.pad,
            input_gain: self.input_gain.clone(),
        }
    }
}

impl<T: Scalar> QuantLayer<T> {
    /// Input after the fixed gain, before the activation quantizer.
    pub fn gained_input(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.input_gain {
            Some(g) => x.mul(g),
            None => Ok(x.clone()),
        }
    }

    /// Weight as seen by the forward pass in the current quantizer mode.
    pub fn effective_weight(&self, rng: Option<&mut RngStream>, bypass: bool) -> Result<Tensor<T>> {
        match (&self.w_quant, bypass) {
            (Some(q), false) => q.forward(&self.weight, noise_source(rng)),
            _ => Ok(self.weight.clone()),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mut rng: Option<&mut RngStream>, bypass: bool) -> Result<Tensor<T>> {
        let x = self.gained_input(x)?;
        let xq = match (&self.a_quant, bypass) {
            (Some(q), false) => q.forward(&x, noise_source(rng.as_deref_mut()))?,
            _ => x,
        };
        let wq = self.effective_weight(rng, bypass)?;
        let y = match self.kind {
            LayerKind::Dense => xq.linear(&wq)?,
            LayerKind::Conv2d => xq.conv2d(&wq, self.stride, self.pad)?,
        };
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    pub fn quantizers(&self) -> impl Iterator<Item = (TensorRole, &Quantizer<T>)> {
        let w = self.w_quant.iter().map(|q| (TensorRole::Weight, q));
        let a = self.a_quant.iter().map(|q| (TensorRole::Activation, q));
        w.chain(a)
    }

    pub fn quantizers_mut(&mut self) -> impl Iterator<Item = (TensorRole, &mut Quantizer<T>)> {
        let w = self.w_quant.iter_mut().map(|q| (TensorRole::Weight, q));
        let a = self.a_quant.iter_mut().map(|q| (TensorRole::Activation, q));
        w.chain(a)
    }
}

#[derive(Debug)]
pub struct BatchNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: T,
}

impl<T: Scalar> Clone for BatchNorm<T> {
    fn clone(&self) -> Self {
        Self {
            gamma: self.gamma.deep_clone(),
            beta: self.beta.deep_clone(),
            running_mean: self.running_mean.deep_clone(),
            running_var: self.running_var.deep_clone(),
            eps: self.eps,
        }
    }
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::param(&[channels], vec![T::one(); channels])?,
            beta: Tensor::param(&[channels], vec![T::zero(); channels])?,
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            eps: T::lit(1e-5),
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        match mode {
            BnMode::Running => {
                let (rm, rv) = (self.running_mean.to_vec(), self.running_var.to_vec());
                Ok(x.batch_norm(&self.gamma, &self.beta, Some((&rm, &rv)), self.eps)?.output)
            }
            BnMode::Batch => Ok(x.batch_norm(&self.gamma, &self.beta, None, self.eps)?.output),
            BnMode::Update { momentum } => {
                let out = x.batch_norm(&self.gamma, &self.beta, None, self.eps)?;
                let m = T::lit(momentum);
                let blend = |t: &Tensor<T>, batch: &[T]| {
                    t.update_data(|d| {
                        for (r, &b) in d.iter_mut().zip(batch) {
                            *r = (T::one() - m) * *r + m * b;
                        }
                    })
                };
                blend(&self.running_mean, &out.batch_mean);
                blend(&self.running_var, &out.batch_var);
                Ok(out.output)
            }
        }
    }
}

#[derive(Debug)]
pub struct Block<T: Scalar> {
    pub layer: QuantLayer<T>,
    pub bn: Option<BatchNorm<T>>,
    pub relu: bool,
    pub pool: bool,
}

impl<T: Scalar> Clone for Block<T> {
    fn clone(&self) -> Self {
        Self {
            layer: self.layer.clone(),
            bn: self.bn.clone(),
            relu: self.relu,
            pool: self.pool,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnAffine,
    /// Not learnable; carried for checkpointing.
    BnRunning,
    AlphaRaw,
    BitRaw,
}

impl ParamKind {
    pub fn learnable(self) -> bool {
        self != ParamKind::BnRunning
    }

    pub fn is_quantizer(self) -> bool {
        matches!(self, ParamKind::AlphaRaw | ParamKind::BitRaw)
    }
}

#[derive(Clone, Debug)]
pub struct NamedParam<T: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

#[derive(Debug)]
pub struct Network<T: Scalar> {
    pub spec: NetworkSpec,
    pub blocks: Vec<Block<T>>,
}

impl<T: Scalar> Clone for Network<T> {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            blocks: self.blocks.clone(),
        }
    }
}

fn role_name(role: TensorRole) -> &'static str {
    match role {
        TensorRole::Weight => "w_quant",
        TensorRole::Activation => "a_quant",
    }
}

impl<T: Scalar> Network<T> {
    /// He-normal weights (unit-gain on the final layer), zero biases, weight
    /// boundaries at `max|w|`, activation boundaries at 1 until
    /// [`Network::calibrate`] runs.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.resolve()?;
        let n_layers = spec.layers.len();
        let mut blocks = Vec::with_capacity(n_layers);
        for (i, (ls, sh)) in spec.layers.iter().zip(&shapes).enumerate() {
            let mut rng = RngStream::new(seed, 0x1A7E_0000 + i as u64);
            let (wshape, fan_in) = match ls.kind {
                LayerKind::Dense => (vec![ls.out, sh.in_features], sh.in_features),
                LayerKind::Conv2d => (
                    vec![ls.out, sh.in_features, ls.kernel, ls.kernel],
                    sh.in_features * ls.kernel * ls.kernel,
                ),
            };
            let gain = if i + 1 == n_layers { 1.0 } else { 2.0 };
            let std = (gain / fan_in as f64).sqrt();
            // Input columns are divided by their fixed gain, so a gained layer
            // starts out computing the same function as an ungained one.
            let per: usize = wshape[2..].iter().product();
            let col_gain = |k: usize| ls.input_gain.as_ref().map_or(1.0, |g| g[(k / per) % sh.in_features]);
            let w: Vec<T> = rng
                .normal_vec::<f64>(wshape.iter().product())
                .into_iter()
                .enumerate()
                .map(|(k, v)| T::lit(v * std / col_gain(k)))
                .collect();
            let max_abs = w.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            let weight = Tensor::param(&wshape, w)?;
            let bias = if ls.batch_norm {
                None
            } else {
                let shape = match ls.kind {
                    LayerKind::Dense => vec![ls.out],
                    LayerKind::Conv2d => vec![ls.out, 1, 1],
                };
                Some(Tensor::param(&shape, vec![T::zero(); ls.out])?)
            };
            let quantized = spec.quantized(i);
            let a_signed = i == 0 && spec.signed_input;
            let w_quant = (quantized && spec.quantize_weights)
                .then(|| make_quantizer(spec, max_abs.max(T::lit(1e-3)), true))
                .transpose()?;
            let a_quant = (quantized && spec.quantize_activations)
                .then(|| make_quantizer(spec, T::one(), a_signed))
                .transpose()?;
            let input_gain = ls
                .input_gain
                .as_ref()
                .map(|g| {
                    let shape = match ls.kind {
                        LayerKind::Dense => vec![g.len()],
                        LayerKind::Conv2d => vec![g.len(), 1, 1],
                    };
                    Tensor::from_vec(&shape, g.iter().map(|&v| T::lit(v)).collect())
                })
                .transpose()?;
            let cost = LayerCost {
                macs: sh.macs,
                n_weight_elems: weight.numel(),
                n_act_elems: sh.input.iter().product(),
            };
            blocks.push(Block {
                layer: QuantLayer {
                    kind: ls.kind,
                    weight,
                    bias,
                    w_quant,
                    a_quant,
                    cost,
                    stride: ls.stride,
                    pad: ls.pad,
                    input_gain,
                },
                bn: ls.batch_norm.then(|| BatchNorm::new(ls.out)).transpose()?,
                relu: ls.relu,
                pool: ls.global_pool,
            });
        }
        Ok(Self {
            spec: spec.clone(),
            blocks,
        })
    }

    fn prepare_input(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.ndim() < 2 || x.shape()[1..] != self.spec.input_shape[..] {
            return Err(Error::ShapeMismatch {
                op: "network input",
                lhs: x.shape().to_vec(),
                rhs: self.spec.input_shape.clone(),
            });
        }
        Ok(match self.spec.input_precision {
            InputPrecision::Fp => x.clone(),
            InputPrecision::Fixed8bit => {
                let k = T::lit(255.0);
                let snapped = x.data().iter().map(|&v| (v.max(T::zero()).min(T::one()) * k).round() / k).collect();
                Tensor::from_vec(x.shape(), snapped)?
            }
        })
    }

    /// Runs blocks `[0, upto)`, then hands each block's raw input to `tap`.
    fn run(&self, x: &Tensor<T>, opts: &mut Forward<'_>, mut tap: impl FnMut(usize, &Tensor<T>) -> Result<()>) -> Result<Tensor<T>> {
        let mut h = self.prepare_input(x)?;
        let n = h.shape()[0];
        for (i, b) in self.blocks.iter().enumerate() {
            if b.layer.kind == LayerKind::Dense && h.ndim() > 2 {
                let f = h.numel() / n;
                h = h.reshape(&[n, f])?;
            }
            tap(i, &h)?;
            h = b.layer.forward(&h, opts.rng.as_deref_mut(), opts.bypass_quant)?;
            if let Some(bn) = &b.bn {
                h = bn.forward(&h, opts.bn)?;
            }
            if b.relu {
                h = h.relu();
            }
            if b.pool {
                h = h.global_avg_pool()?;
            }
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Tensor<T>, opts: &mut Forward<'_>) -> Result<Tensor<T>> {
        self.run(x, opts, |_, _| Ok(()))
    }

    /// Sets activation boundaries to three standard deviations of each
    /// quantized layer's input on a full-precision pass over `x`.
    pub fn calibrate(&self, x: &Tensor<T>) -> Result<()> {
        no_grad(|| {
            let mut opts = Forward::eval().full_precision().with_bn(BnMode::Batch);
            self.run(x, &mut opts, |i, h| {
                let layer = &self.blocks[i].layer;
                if let Some(Quantizer::Nipq(q)) = &layer.a_quant {
                    let g = layer.gained_input(h)?;
                    let v = g.data();
                    let n = T::from_usize_lossy(v.len());
                    let mean = v.iter().copied().sum::<T>() / n;
                    let var = v.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
                    let alpha = T::lit(3.0) * var.sqrt();
                    q.set_alpha(if alpha > T::lit(1e-6) { alpha } else { T::one() })?;
                }
                Ok(())
            })
            .map(|_| ())
        })
    }

    /// Every tensor that defines the network's behavior, in a fixed order.
    pub fn named_params(&self) -> Vec<NamedParam<T>> {
        let mut out = Vec::new();
        let mut push = |name: String, kind, tensor: &Tensor<T>| {
            out.push(NamedParam {
                name,
                kind,
                tensor: tensor.clone(),
            })
        };
        for (i, b) in self.blocks.iter().enumerate() {
            let l = &b.layer;
            push(format!("l{i}.weight"), ParamKind::Weight, &l.weight);
            if let Some(bias) = &l.bias {
                push(format!("l{i}.bias"), ParamKind::Bias, bias);
            }
            if let Some(bn) = &b.bn {
                push(format!("l{i}.bn.gamma"), ParamKind::BnAffine, &bn.gamma);
                push(format!("l{i}.bn.beta"), ParamKind::BnAffine, &bn.beta);
                push(format!("l{i}.bn.running_mean"), ParamKind::BnRunning, &bn.running_mean);
                push(format!("l{i}.bn.running_var"), ParamKind::BnRunning, &bn.running_var);
            }
            for (role, q) in l.quantizers() {
                let r = role_name(role);
                if let Some(a) = q.alpha_raw() {
                    push(format!("l{i}.{r}.alpha_raw"), ParamKind::AlphaRaw, a);
                }
                push(format!("l{i}.{r}.bit_raw"), ParamKind::BitRaw, q.bit_raw());
            }
        }
        out
    }

    pub fn quantizers(&self) -> Vec<(String, TensorRole, &Quantizer<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for (role, q) in b.layer.quantizers() {
                out.push((format!("l{i}.{}", role_name(role)), role, q));
            }
        }
        out
    }

    pub fn quantizers_mut(&mut self) -> Vec<(String, TensorRole, &mut Quantizer<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (role, q) in b.layer.quantizers_mut() {
                out.push((format!("l{i}.{}", role_name(role)), role, q));
            }
        }
        out
    }

    pub fn set_mode(&mut self, mode: QuantMode) {
        for (_, _, q) in self.quantizers_mut() {
            q.set_mode(mode);
        }
    }

    /// Pins every bit to `round(effective_bit)`; returns them in quantizer order.
    pub fn freeze_bits(&mut self) -> Vec<u32> {
        self.quantizers_mut().into_iter().map(|(_, _, q)| q.freeze_bit()).collect()
    }

    /// Continuous bits and element counts of all quantizers of one role.
    pub fn bit_terms(&self, role: TensorRole) -> (Vec<Tensor<T>>, Vec<usize>) {
        let mut bits = Vec::new();
        let mut elems = Vec::new();
        for b in &self.blocks {
            let l = &b.layer;
            let q = match role {
                TensorRole::Weight => &l.w_quant,
                TensorRole::Activation => &l.a_quant,
            };
            if let Some(q) = q {
                bits.push(q.effective_bit());
                elems.push(match role {
                    TensorRole::Weight => l.cost.n_weight_elems,
                    TensorRole::Activation => l.cost.n_act_elems,
                });
            }
        }
        (bits, elems)
    }

    /// Per-layer cost with continuous weight and activation bits; full-precision
    /// tensors enter as constants.
    pub fn bops_terms(&self) -> Vec<(LayerCost, Tensor<T>, Tensor<T>)> {
        let fp = || Tensor::scalar(T::lit(FP_BITS as f64));
        self.blocks
            .iter()
            .map(|b| {
                let l = &b.layer;
                let w = l.w_quant.as_ref().map_or_else(fp, Quantizer::effective_bit);
                let a = l.a_quant.as_ref().map_or_else(fp, Quantizer::effective_bit);
                (l.cost, w, a)
            })
            .collect()
    }

    /// Deployed `(weight bit, activation bit)` per layer; full precision counts as 32.
    pub fn deployed_bits(&self) -> Vec<(u32, u32)> {
        self.blocks
            .iter()
            .map(|b| {
                let l = &b.layer;
                let bit = |q: &Option<Quantizer<T>>| q.as_ref().map_or(FP_BITS, Quantizer::quant_bit);
                (bit(&l.w_quant), bit(&l.a_quant))
            })
            .collect()
    }

    /// Element-weighted mean deployed bit over quantized tensors of one role.
    pub fn avg_deployed_bits(&self, role: TensorRole) -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0usize;
        for b in &self.blocks {
            let l = &b.layer;
            let (q, e) = match role {
                TensorRole::Weight => (&l.w_quant, l.cost.n_weight_elems),
                TensorRole::Activation => (&l.a_quant, l.cost.n_act_elems),
            };
            if let Some(q) = q {
                num += q.quant_bit() as f64 * e as f64;
                den += e;
            }
        }
        (den > 0).then(|| num / den as f64)
    }

    pub fn total_bops(&self) -> u64 {
        self.blocks
            .iter()
            .zip(self.deployed_bits())
            .map(|(b, (w, a))| crate::constraints::layer_bops_exact(&b.layer.cost, w, a))
            .sum()
    }

    /// Per-sample BOPs if every quantized tensor ran at `bits`.
    pub fn bops_at(&self, bits: u32) -> u64 {
        self.blocks
            .iter()
            .map(|b| {
                let l = &b.layer;
                let w = if l.w_quant.is_some() { bits } else { FP_BITS };
                let a = if l.a_quant.is_some() { bits } else { FP_BITS };
                crate::constraints::layer_bops_exact(&l.cost, w, a)
            })
            .sum()
    }

    pub fn has_batch_norm(&self) -> bool {
        self.blocks.iter().any(|b| b.bn.is_some())
    }

    /// The same network over another scalar type, including quantizer modes,
    /// frozen bits and frozen ranges.
    pub fn convert<U: Scalar>(&self) -> Result<Network<U>> {
        let mut out = Network::<U>::build(&self.spec, 0)?;
        for (src, dst) in self.named_params().iter().zip(out.named_params()) {
            dst.tensor
                .set_data(src.tensor.data().iter().map(|v| U::lit(v.as_f64())).collect())?;
        }
        for ((_, _, s), (_, _, d)) in self.quantizers().into_iter().zip(out.quantizers_mut()) {
            d.set_mode(s.mode());
            match (s, d) {
                (Quantizer::Nipq(s), Quantizer::Nipq(d)) => d.set_frozen_bit(s.frozen_bit()),
                (Quantizer::MinMax(s), Quantizer::MinMax(d)) => {
                    d.set_frozen_bit(s.frozen_bit());
                    d.set_frozen_range(s.frozen_range().map(|(a, b)| (U::lit(a.as_f64()), U::lit(b.as_f64()))));
                }
                _ => return Err(invalid("quantizer kinds differ after rebuild")),
            }
        }
        Ok(out)
    }
}

fn make_quantizer<T: Scalar>(spec: &NetworkSpec, alpha: T, signed: bool) -> Result<Quantizer<T>> {
    let bit_raw = T::lit(spec.init_bit_raw);
    Ok(match spec.quantizer {
        QuantizerKind::Nipq => {
            Quantizer::Nipq(QuantParams::from_raw(alpha_to_raw(alpha)?, bit_raw, signed).with_noise(spec.noise_dist, spec.bit_noise_policy))
        }
        QuantizerKind::MinMax => {
            let mut q = MinMaxQuant::from_raw(bit_raw);
            q.bit_noise_policy = spec.bit_noise_policy;
            Quantizer::MinMax(q)
        }
    })
}

/// A regression network whose hidden layers differ sharply in sensitivity.
pub struct SensitivityPair<T: Scalar> {
    pub network: Network<T>,
    pub train: Dataset<T>,
    pub test: Dataset<T>,
    /// Block index of the layer fed by rescaled features.
    pub sensitive: usize,
    pub other: usize,
}

pub const SENSITIVITY_INPUTS: usize = 16;
pub const SENSITIVITY_HIDDEN: usize = 16;
/// Magnitude spread of the rescaled features feeding the sensitive layer.
pub const SENSITIVITY_GAIN: f64 = 8.0;

fn alternating_gain(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| if j % 2 == 0 { SENSITIVITY_GAIN } else { 1.0 / SENSITIVITY_GAIN })
        .collect()
}

/// Two quantized hidden layers A (first) and B (second) and a full-precision
/// head, on a teacher-generated regression task. The inputs of the sensitive
/// layer are rescaled feature-wise by alternating factors `g` and `1/g`, so
/// that layer's Hessian trace is inflated and a shared per-tensor step size
/// cannot serve both weight scales. `swapped` moves the rescaling onto B.
///
/// Returned untrained; the trace ordering is checked by the analysis module
/// after full-precision training.
pub fn constructed_sensitivity_pair<T: Scalar>(seed: u64, swapped: bool) -> Result<SensitivityPair<T>> {
    let mut a = LayerSpec::dense(SENSITIVITY_HIDDEN, true);
    let mut b = LayerSpec::dense(SENSITIVITY_HIDDEN, true);
    a.quantize = Some(true);
    b.quantize = Some(true);
    let mut head = LayerSpec::dense(1, false);
    head.quantize = Some(false);
    if swapped {
        b.input_gain = Some(alternating_gain(SENSITIVITY_HIDDEN));
    } else {
        a.input_gain = Some(alternating_gain(SENSITIVITY_INPUTS));
    }
    let spec = NetworkSpec::new(vec![SENSITIVITY_INPUTS], vec![a, b, head]);
    let network = Network::build(&spec, seed)?;

    // Teacher: a fixed random ReLU network on the raw inputs, outputs standardized.
    let n = 512;
    let mut rng = RngStream::new(seed, 0x7EAC_4E55);
    let x: Vec<f64> = rng.uniform_vec(n * SENSITIVITY_INPUTS);
    let w1: Vec<f64> = rng.normal_vec(SENSITIVITY_INPUTS * SENSITIVITY_HIDDEN);
    let w2: Vec<f64> = rng.normal_vec(SENSITIVITY_HIDDEN);
    let mut y: Vec<f64> = (0..n)
        .map(|s| {
            let row = &x[s * SENSITIVITY_INPUTS..(s + 1) * SENSITIVITY_INPUTS];
            (0..SENSITIVITY_HIDDEN)
                .map(|h| {
                    let pre: f64 = (0..SENSITIVITY_INPUTS)
                        .map(|j| w1[h * SENSITIVITY_INPUTS + j] * (row[j] - 0.5))
                        .sum();
                    w2[h] * pre.max(0.0)
                })
                .sum()
        })
        .collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(std > 0.0) {
        return Err(invalid("degenerate teacher; re-seed"));
    }
    for v in &mut y {
        *v = (*v - mean) / std;
    }
    let data = Dataset::new(
        "sensitivity_pair",
        Tensor::from_vec(&[n, SENSITIVITY_INPUTS], x.into_iter().map(T::lit).collect())?,
        Targets::Values(Tensor::from_vec(&[n, 1], y.into_iter().map(T::lit).collect())?),
    )?;
    let (train, test) = data.split_fraction(0.75, seed)?;
    Ok(SensitivityPair {
        network,
        train,
        test,
        sensitive: if swapped { 1 } else { 0 },
        other: if swapped { 0 } else { 1 },
    })
}

#[cfg(test)]
mod tests;
