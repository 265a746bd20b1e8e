//! The noise-injection pseudo quantizer.
//!
//! One operator with two modes sharing a learnable truncation boundary
//! `alpha = softplus(alpha_raw)` and a continuous bit-width
//! `bit = 2 + 12 * sigmoid(bit_raw)`:
//!
//! * **noise**: adds pseudo quantization noise with standard deviation
//!   `delta / 2` (Gaussian) or `U[-delta/2, delta/2]` and truncates to
//!   `[0, alpha]` (`[-alpha, alpha]` when signed). Fully differentiable in
//!   the input, `alpha_raw` and `bit_raw`; no straight-through estimator.
//! * **quant**: LSQ-style rounding on the grid `k * delta` with the bit
//!   rounded and detached. Backward uses the straight-through estimator for
//!   the rounding.
//!
//! The noise magnitude follows the reference pseudo-code (standard deviation
//! `delta / 2`); prose descriptions of the method that speak of a `delta / 2`
//! *variance* differ from this by a square.

mod minmax;

use serde::{Deserialize, Serialize};

pub use minmax::MinMaxQuant;

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::Scalar;

pub const MIN_BIT: f64 = 2.0;
pub const BIT_SPAN: f64 = 12.0;
/// Bounds on the noise-injected bit.
pub const NOISY_BIT_MAX: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    Noise,
    Quant,
}

impl QuantMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantMode::Noise => "noise",
            QuantMode::Quant => "quant",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDist {
    #[default]
    Gaussian,
    Uniform,
}

/// How the bit-width is perturbed in noise mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitNoisePolicy {
    /// `bit + z / 2` with one standard-normal draw per forward.
    #[default]
    Inject,
    /// `round(bit)` with a pass-through gradient.
    Ste,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Activation,
    Weight,
}

/// Element count and role of the tensor a quantizer instance sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantMeta {
    pub n_elements: usize,
    pub role: TensorRole,
}

impl QuantMeta {
    pub fn new(n_elements: usize, role: TensorRole) -> Result<Self> {
        if n_elements == 0 {
            return Err(invalid("quantizer must cover at least one element"));
        }
        Ok(Self { n_elements, role })
    }
}

/// Noise drawn for one noise-mode forward. Kept separate so gradient checks
/// can replay a forward with the samples frozen.
#[derive(Clone, Debug)]
pub struct NoiseSamples<T: Scalar> {
    /// Per-element draw: standard normal, or uniform on `[0, 1)`.
    pub z: Vec<T>,
    /// Standard-normal draw perturbing the bit-width.
    pub z_bit: T,
}

impl<T: Scalar> NoiseSamples<T> {
    pub fn draw(n: usize, dist: NoiseDist, rng: &mut RngStream) -> Self {
        let z_bit = rng.normal();
        let z = match dist {
            NoiseDist::Gaussian => rng.normal_vec(n),
            NoiseDist::Uniform => rng.uniform_vec(n),
        };
        Self { z, z_bit }
    }

    /// Samples that make the noise vanish for the given distribution.
    pub fn zero(n: usize, dist: NoiseDist) -> Self {
        let z = match dist {
            NoiseDist::Gaussian => vec![T::zero(); n],
            NoiseDist::Uniform => vec![T::lit(0.5); n],
        };
        Self { z, z_bit: T::zero() }
    }
}

/// Where noise-mode forwards get their randomness.
pub enum Noise<'a, T: Scalar> {
    Rng(&'a mut RngStream),
    /// Noise forced to zero (`z = 0`, `z_bit = 0`).
    Zero,
    Frozen(&'a NoiseSamples<T>),
}

/// Learnable state and static policy of one quantizer instance.
#[derive(Debug)]
pub struct QuantParams<T: Scalar> {
    pub alpha_raw: Tensor<T>,
    pub bit_raw: Tensor<T>,
    pub signed: bool,
    pub noise_dist: NoiseDist,
    pub bit_noise_policy: BitNoisePolicy,
    mode: QuantMode,
    frozen_bit: Option<u32>,
}

impl<T: Scalar> Clone for QuantParams<T> {
    fn clone(&self) -> Self {
        Self {
            alpha_raw: self.alpha_raw.deep_clone(),
            bit_raw: self.bit_raw.deep_clone(),
            signed: self.signed,
            noise_dist: self.noise_dist,
            bit_noise_policy: self.bit_noise_policy,
            mode: self.mode,
            frozen_bit: self.frozen_bit,
        }
    }
}

impl<T: Scalar> QuantParams<T> {
    /// Raw parameters given directly; mode starts as noise.
    pub fn from_raw(alpha_raw: T, bit_raw: T, signed: bool) -> Self {
        Self {
            alpha_raw: Tensor::scalar_param(alpha_raw),
            bit_raw: Tensor::scalar_param(bit_raw),
            signed,
            noise_dist: NoiseDist::default(),
            bit_noise_policy: BitNoisePolicy::default(),
            mode: QuantMode::Noise,
            frozen_bit: None,
        }
    }

    /// Initialized so that the effective boundary and bit equal the arguments.
    pub fn new(alpha: T, bit: T, signed: bool) -> Result<Self> {
        Ok(Self::from_raw(alpha_to_raw(alpha)?, bit_to_raw(bit)?, signed))
    }

    pub fn with_noise(mut self, dist: NoiseDist, policy: BitNoisePolicy) -> Self {
        self.noise_dist = dist;
        self.bit_noise_policy = policy;
        self
    }

    pub fn mode(&self) -> QuantMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: QuantMode) {
        self.mode = mode;
    }

    /// `softplus(alpha_raw)`.
    pub fn effective_alpha(&self) -> Tensor<T> {
        self.alpha_raw.softplus()
    }

    /// `2 + 12 * sigmoid(bit_raw)`, in `(2, 14)`.
    pub fn effective_bit(&self) -> Tensor<T> {
        self.bit_raw.sigmoid().mul_scalar(T::lit(BIT_SPAN)).add_scalar(T::lit(MIN_BIT))
    }

    pub fn alpha_value(&self) -> T {
        crate::tensor::no_grad(|| self.effective_alpha().item())
    }

    pub fn bit_value(&self) -> T {
        crate::tensor::no_grad(|| self.effective_bit().item())
    }

    pub fn set_alpha(&self, alpha: T) -> Result<()> {
        self.alpha_raw.set_data(vec![alpha_to_raw(alpha)?])
    }

    /// Integer bit used in quantization mode.
    pub fn quant_bit(&self) -> u32 {
        self.frozen_bit
            .unwrap_or_else(|| self.bit_value().round().to_u32().unwrap_or(MIN_BIT as u32))
    }

    /// Pins the quantization-mode bit to `round(effective_bit)`.
    pub fn freeze_bit(&mut self) -> u32 {
        let b = self.quant_bit();
        self.frozen_bit = Some(b);
        b
    }

    pub fn frozen_bit(&self) -> Option<u32> {
        self.frozen_bit
    }

    pub fn set_frozen_bit(&mut self, bit: Option<u32>) {
        self.frozen_bit = bit;
    }

    fn lower_bound(&self, alpha: &Tensor<T>) -> Tensor<T> {
        if self.signed {
            alpha.neg()
        } else {
            Tensor::scalar(T::zero())
        }
    }

    pub fn forward(&self, x: &Tensor<T>, noise: Noise<'_, T>) -> Result<Tensor<T>> {
        match self.mode {
            QuantMode::Quant => self.quant_forward(x),
            QuantMode::Noise => match noise {
                Noise::Rng(rng) => self.noise_forward(x, rng),
                Noise::Zero => {
                    let s = NoiseSamples::zero(x.numel(), self.noise_dist);
                    self.noise_forward_with(x, &s)
                }
                Noise::Frozen(s) => self.noise_forward_with(x, s),
            },
        }
    }

    /// Noise-mode forward drawing fresh samples from `rng`.
    pub fn noise_forward(&self, x: &Tensor<T>, rng: &mut RngStream) -> Result<Tensor<T>> {
        let s = NoiseSamples::draw(x.numel(), self.noise_dist, rng);
        self.noise_forward_with(x, &s)
    }

    /// The noisy bit-width fed into the step size.
    fn noisy_bit(&self, z_bit: T) -> Result<Tensor<T>> {
        let bit = self.effective_bit();
        match self.bit_noise_policy {
            BitNoisePolicy::Inject => {
                // A signed grid needs at least two bits for a nonzero level.
                let lo = if self.signed { MIN_BIT } else { 1.0 };
                bit.add_scalar(z_bit * T::lit(0.5)).clamp(T::lit(lo), T::lit(NOISY_BIT_MAX))
            }
            BitNoisePolicy::Ste => Ok(bit.round_ste()),
        }
    }

    /// Noise-mode forward with the given samples treated as constants.
    pub fn noise_forward_with(&self, x: &Tensor<T>, s: &NoiseSamples<T>) -> Result<Tensor<T>> {
        if self.mode != QuantMode::Noise {
            return Err(Error::ModeMismatch {
                expected: "noise",
                actual: self.mode.as_str(),
            });
        }
        if s.z.len() != x.numel() {
            return Err(invalid(format!(
                "noise samples cover {} elements, input has {}",
                s.z.len(),
                x.numel()
            )));
        }
        let alpha = self.effective_alpha();
        let bit = self.noisy_bit(s.z_bit)?;
        let delta = step_size(&alpha, &bit, self.signed)?;
        let z = Tensor::from_vec(x.shape(), s.z.clone())?;
        let noise = match self.noise_dist {
            NoiseDist::Gaussian => z.mul(&delta.mul_scalar(T::lit(0.5)))?,
            NoiseDist::Uniform => z.add_scalar(T::lit(-0.5)).mul(&delta)?,
        };
        // clamp(x + n, lo, alpha) equals clamp((x + n) / alpha, lo/alpha, 1) * alpha
        // with identical gradients, and keeps untouched elements bit-exact.
        let lo = self.lower_bound(&alpha);
        x.add(&noise)?.clamp_between(&lo, &alpha)
    }

    /// Quantization-mode forward (LSQ-style, straight-through rounding).
    pub fn quant_forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.mode != QuantMode::Quant {
            return Err(Error::ModeMismatch {
                expected: "quant",
                actual: self.mode.as_str(),
            });
        }
        let b = self.quant_bit();
        let (lo, hi) = level_range(b, self.signed)?;
        let alpha = self.effective_alpha();
        if alpha.item() == T::zero() {
            // Collapsed boundary: every level is zero.
            return Ok(Tensor::zeros(x.shape()));
        }
        let delta = alpha.div_scalar(T::lit(hi as f64));
        let v = x.div(&delta)?.clamp(T::lit(lo as f64), T::lit(hi as f64))?;
        v.round_ste().mul(&delta)
    }
}

/// Integer level range `[lo, hi]` of a `bit`-bit grid.
pub fn level_range(bit: u32, signed: bool) -> Result<(i64, i64)> {
    if signed {
        if bit < 2 {
            return Err(invalid(format!("signed quantization needs bit >= 2, got {bit}")));
        }
        let hi = (1i64 << (bit - 1)) - 1;
        Ok((-hi, hi))
    } else {
        if bit < 1 {
            return Err(invalid("unsigned quantization needs bit >= 1"));
        }
        Ok((0, (1i64 << bit) - 1))
    }
}

/// `alpha / (2^bit - 1)` (unsigned) or `alpha / (2^(bit-1) - 1)` (signed).
pub fn step_size<T: Scalar>(alpha: &Tensor<T>, bit: &Tensor<T>, signed: bool) -> Result<Tensor<T>> {
    let b = bit.item();
    let min = if signed { T::lit(2.0) } else { T::one() };
    if !(b >= min) {
        return Err(invalid(format!(
            "step_size: bit {b} below minimum {min} for {} layout",
            if signed { "signed" } else { "unsigned" }
        )));
    }
    let exponent = if signed { bit.add_scalar(-T::one()) } else { bit.clone() };
    let denom = exponent.pow2().add_scalar(-T::one());
    alpha.div(&denom)
}

pub fn alpha_to_raw<T: Scalar>(alpha: T) -> Result<T> {
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return Err(invalid(format!("alpha must be positive and finite, got {alpha}")));
    }
    Ok(crate::tensor::softplus_inv(alpha))
}

/// Inverse of the bit parametrization; `bit` must lie strictly inside (2, 14).
pub fn bit_to_raw<T: Scalar>(bit: T) -> Result<T> {
    let p = (bit - T::lit(MIN_BIT)) / T::lit(BIT_SPAN);
    if !(p > T::zero() && p < T::one()) {
        return Err(invalid(format!("bit must lie in (2, 14), got {bit}")));
    }
    Ok((p / (T::one() - p)).ln())
}

/// Either quantizer variant behind one interface.
#[derive(Clone, Debug)]
pub enum Quantizer<T: Scalar> {
    Nipq(QuantParams<T>),
    MinMax(MinMaxQuant<T>),
}

impl<T: Scalar> Quantizer<T> {
    pub fn forward(&self, x: &Tensor<T>, noise: Noise<'_, T>) -> Result<Tensor<T>> {
        match self {
            Quantizer::Nipq(q) => q.forward(x, noise),
            Quantizer::MinMax(q) => q.forward(x, noise),
        }
    }

    pub fn mode(&self) -> QuantMode {
        match self {
            Quantizer::Nipq(q) => q.mode(),
            Quantizer::MinMax(q) => q.mode(),
        }
    }

    pub fn set_mode(&mut self, mode: QuantMode) {
        match self {
            Quantizer::Nipq(q) => q.set_mode(mode),
            Quantizer::MinMax(q) => q.set_mode(mode),
        }
    }

    pub fn effective_bit(&self) -> Tensor<T> {
        match self {
            Quantizer::Nipq(q) => q.effective_bit(),
            Quantizer::MinMax(q) => q.effective_bit(),
        }
    }

    pub fn bit_value(&self) -> T {
        crate::tensor::no_grad(|| self.effective_bit().item())
    }

    pub fn quant_bit(&self) -> u32 {
        match self {
            Quantizer::Nipq(q) => q.quant_bit(),
            Quantizer::MinMax(q) => q.quant_bit(),
        }
    }

    pub fn freeze_bit(&mut self) -> u32 {
        match self {
            Quantizer::Nipq(q) => q.freeze_bit(),
            Quantizer::MinMax(q) => q.freeze_bit(),
        }
    }

    pub fn frozen_bit(&self) -> Option<u32> {
        match self {
            Quantizer::Nipq(q) => q.frozen_bit(),
            Quantizer::MinMax(q) => q.frozen_bit(),
        }
    }

    pub fn bit_raw(&self) -> &Tensor<T> {
        match self {
            Quantizer::Nipq(q) => &q.bit_raw,
            Quantizer::MinMax(q) => &q.bit_raw,
        }
    }

    pub fn alpha_raw(&self) -> Option<&Tensor<T>> {
        match self {
            Quantizer::Nipq(q) => Some(&q.alpha_raw),
            Quantizer::MinMax(_) => None,
        }
    }

    /// Effective truncation boundary; min-max reports its frozen range half-width.
    pub fn alpha_value(&self) -> Option<T> {
        match self {
            Quantizer::Nipq(q) => Some(q.alpha_value()),
            Quantizer::MinMax(_) => None,
        }
    }

    pub fn signed(&self) -> bool {
        match self {
            Quantizer::Nipq(q) => q.signed,
            Quantizer::MinMax(_) => true,
        }
    }

    pub fn as_nipq(&self) -> Option<&QuantParams<T>> {
        match self {
            Quantizer::Nipq(q) => Some(q),
            Quantizer::MinMax(_) => None,
        }
    }

    pub fn as_nipq_mut(&mut self) -> Option<&mut QuantParams<T>> {
        match self {
            Quantizer::Nipq(q) => Some(q),
            Quantizer::MinMax(_) => None,
        }
    }
}

#[cfg(test)]
mod tests;
