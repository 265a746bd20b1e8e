//! Min-max linear quantizer: the grid spans the tensor's observed range with
//! no learned truncation. Used as the ablation baseline for truncation.

use super::{bit_to_raw, BitNoisePolicy, Noise, NoiseSamples, QuantMode, BIT_SPAN, MIN_BIT, NOISY_BIT_MAX};
use crate::error::{invalid, Error, Result};
use crate::tensor::{no_grad, Tensor};
use crate::Scalar;

#[derive(Debug)]
pub struct MinMaxQuant<T: Scalar> {
    pub bit_raw: Tensor<T>,
    pub bit_noise_policy: BitNoisePolicy,
    mode: QuantMode,
    frozen_bit: Option<u32>,
    /// `(min, max)` pinned at export; otherwise recomputed every forward.
    frozen_range: Option<(T, T)>,
}

impl<T: Scalar> Clone for MinMaxQuant<T> {
    fn clone(&self) -> Self {
        Self {
            bit_raw: self.bit_raw.deep_clone(),
            bit_noise_policy: self.bit_noise_policy,
            mode: self.mode,
            frozen_bit: self.frozen_bit,
            frozen_range: self.frozen_range,
        }
    }
}

impl<T: Scalar> MinMaxQuant<T> {
    pub fn new(bit: T) -> Result<Self> {
        Ok(Self::from_raw(bit_to_raw(bit)?))
    }

    pub fn from_raw(bit_raw: T) -> Self {
        Self {
            bit_raw: Tensor::scalar_param(bit_raw),
            bit_noise_policy: BitNoisePolicy::default(),
            mode: QuantMode::Noise,
            frozen_bit: None,
            frozen_range: None,
        }
    }

    pub fn mode(&self) -> QuantMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: QuantMode) {
        self.mode = mode;
    }

    pub fn effective_bit(&self) -> Tensor<T> {
        self.bit_raw.sigmoid().mul_scalar(T::lit(BIT_SPAN)).add_scalar(T::lit(MIN_BIT))
    }

    pub fn quant_bit(&self) -> u32 {
        self.frozen_bit
            .unwrap_or_else(|| no_grad(|| self.effective_bit().item()).round().to_u32().unwrap_or(MIN_BIT as u32))
    }

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

    pub fn frozen_range(&self) -> Option<(T, T)> {
        self.frozen_range
    }

    pub fn set_frozen_range(&mut self, range: Option<(T, T)>) {
        self.frozen_range = range;
    }

    /// Pins the range to the statistics of `x`.
    pub fn freeze_range(&mut self, x: &Tensor<T>) {
        self.frozen_range = Some(range_of(x));
    }

    fn range(&self, x: &Tensor<T>) -> (T, T) {
        self.frozen_range.unwrap_or_else(|| range_of(x))
    }

    pub fn forward(&self, x: &Tensor<T>, noise: Noise<'_, T>) -> Result<Tensor<T>> {
        match self.mode {
            QuantMode::Quant => self.quant_forward(x),
            QuantMode::Noise => {
                let s = match noise {
                    Noise::Rng(rng) => NoiseSamples::draw(x.numel(), super::NoiseDist::Gaussian, rng),
                    Noise::Zero => NoiseSamples::zero(x.numel(), super::NoiseDist::Gaussian),
                    Noise::Frozen(s) => s.clone(),
                };
                self.noise_forward_with(x, &s)
            }
        }
    }

    /// `x + z * delta / 2` with `delta = (max - min) / (2^bit - 1)`; no truncation.
    pub fn noise_forward_with(&self, x: &Tensor<T>, s: &NoiseSamples<T>) -> Result<Tensor<T>> {
        if self.mode != QuantMode::Noise {
            return Err(Error::ModeMismatch {
                expected: "noise",
                actual: self.mode.as_str(),
            });
        }
        if s.z.len() != x.numel() {
            return Err(invalid("noise samples do not match input size"));
        }
        let (lo, hi) = self.range(x);
        let bit = match self.bit_noise_policy {
            BitNoisePolicy::Inject => self
                .effective_bit()
                .add_scalar(s.z_bit * T::lit(0.5))
                .clamp(T::one(), T::lit(NOISY_BIT_MAX))?,
            BitNoisePolicy::Ste => self.effective_bit().round_ste(),
        };
        let delta = Tensor::scalar(hi - lo).div(&bit.pow2().add_scalar(-T::one()))?;
        let z = Tensor::from_vec(x.shape(), s.z.clone())?;
        x.add(&z.mul(&delta.mul_scalar(T::lit(0.5)))?)
    }

    /// `lo + round((x - lo) / delta) * delta`; degenerate ranges pass `x` through.
    pub fn quant_forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.mode != QuantMode::Quant {
            return Err(Error::ModeMismatch {
                expected: "quant",
                actual: self.mode.as_str(),
            });
        }
        let (lo, hi) = self.range(x);
        if !(hi > lo) {
            return Ok(x.clone());
        }
        let levels = T::lit(((1u64 << self.quant_bit()) - 1) as f64);
        let span = hi - lo;
        // Scale before dividing so grid points and ties stay exact.
        let v = x.add_scalar(-lo).mul_scalar(levels).div_scalar(span).clamp(T::zero(), levels)?;
        Ok(v.round_ste().mul_scalar(span).div_scalar(levels).add_scalar(lo))
    }
}

fn range_of<T: Scalar>(x: &Tensor<T>) -> (T, T) {
    let d = x.data();
    let lo = d.iter().copied().fold(T::infinity(), T::min);
    let hi = d.iter().copied().fold(T::neg_infinity(), T::max);
    (lo, hi)
}
