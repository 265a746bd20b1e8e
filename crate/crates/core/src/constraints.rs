//! Differentiable resource penalties tying continuous bit-widths to a budget.
//!
//! Both penalties are Huber losses on the distance to the target, so they are
//! two-sided: sitting below the budget is penalized like sitting above it.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    AvgBitWeight,
    AvgBitActivation,
    Bops,
}

fn default_delta() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceTarget {
    pub kind: ResourceKind,
    /// Bits for the average-bit kinds, bit-operations for `bops`.
    pub target: f64,
    pub lambda: f64,
    #[serde(default = "default_delta")]
    pub huber_delta: f64,
}

impl ResourceTarget {
    pub fn new(kind: ResourceKind, target: f64, lambda: f64) -> Result<Self> {
        let t = Self {
            kind,
            target,
            lambda,
            huber_delta: default_delta(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0) {
            return Err(invalid(format!("resource target must be > 0, got {}", self.target)));
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.huber_delta > 0.0) {
            return Err(invalid(format!("huber delta must be > 0, got {}", self.huber_delta)));
        }
        Ok(())
    }
}

/// Per-layer compute and element counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    /// Multiply-accumulates for one input sample.
    pub macs: u64,
    pub n_weight_elems: usize,
    /// Input activation elements for one sample.
    pub n_act_elems: usize,
}

/// `lambda * huber(sum(bit_i * e_i) / sum(e_i) - target)`.
pub fn avg_bit_penalty<T: Scalar>(bits: &[Tensor<T>], elems: &[usize], target: &ResourceTarget) -> Result<Tensor<T>> {
    target.validate()?;
    if bits.is_empty() || bits.len() != elems.len() {
        return Err(invalid(format!(
            "avg_bit_penalty: need matching nonempty lists, got {} bits and {} counts",
            bits.len(),
            elems.len()
        )));
    }
    let avg = weighted_average_bits(bits, elems)?;
    Ok(avg
        .add_scalar(T::lit(-target.target))
        .huber(T::lit(target.huber_delta))?
        .mul_scalar(T::lit(target.lambda)))
}

/// Element-weighted mean of the given bit tensors.
pub fn weighted_average_bits<T: Scalar>(bits: &[Tensor<T>], elems: &[usize]) -> Result<Tensor<T>> {
    let total: usize = elems.iter().sum();
    if total == 0 {
        return Err(invalid("element counts sum to zero"));
    }
    let total = T::from_usize_lossy(total);
    let mut acc: Option<Tensor<T>> = None;
    for (b, &e) in bits.iter().zip(elems) {
        let term = b.mul_scalar(T::from_usize_lossy(e) / total);
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    acc.ok_or_else(|| invalid("no bits"))
}

/// `macs * bit_w * bit_a`, differentiable in both bit-widths.
pub fn layer_bops<T: Scalar>(cost: &LayerCost, bit_w: &Tensor<T>, bit_a: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(bit_w.mul(bit_a)?.mul_scalar(T::lit(cost.macs as f64)))
}

/// Integer bit-operation count for deployed (integer) bit-widths.
pub fn layer_bops_exact(cost: &LayerCost, bit_w: u32, bit_a: u32) -> u64 {
    cost.macs * bit_w as u64 * bit_a as u64
}

/// `lambda * huber(sum(bops) / target - 1)`.
pub fn bops_penalty<T: Scalar>(layers: &[(LayerCost, Tensor<T>, Tensor<T>)], target: &ResourceTarget) -> Result<Tensor<T>> {
    target.validate()?;
    if layers.is_empty() {
        return Err(invalid("bops_penalty: no layers"));
    }
    let mut ratio: Option<Tensor<T>> = None;
    for (cost, bw, ba) in layers {
        // Normalize per layer before multiplying to keep magnitudes near 1.
        let term = bw.mul(ba)?.mul_scalar(T::lit(cost.macs as f64 / target.target));
        ratio = Some(match ratio {
            None => term,
            Some(r) => r.add(&term)?,
        });
    }
    let ratio = ratio.expect("nonempty");
    Ok(ratio
        .add_scalar(-T::one())
        .huber(T::lit(target.huber_delta))?
        .mul_scalar(T::lit(target.lambda)))
}

/// Task loss plus every penalty.
pub fn total_loss<T: Scalar>(task: &Tensor<T>, penalties: &[Tensor<T>]) -> Result<Tensor<T>> {
    penalties.iter().try_fold(task.clone(), |acc, p| acc.add(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(v: &[f64]) -> Vec<Tensor<f64>> {
        v.iter().map(|&b| Tensor::scalar_param(b)).collect()
    }

    fn avg_target(t: f64, lambda: f64) -> ResourceTarget {
        ResourceTarget::new(ResourceKind::AvgBitWeight, t, lambda).unwrap()
    }

    #[test]
    fn avg_bit_examples() {
        let p = avg_bit_penalty(&bits(&[4.0, 4.0]), &[10, 10], &avg_target(4.0, 1.0)).unwrap();
        assert_eq!(p.item(), 0.0);
        let p = avg_bit_penalty(&bits(&[3.0, 5.0]), &[30, 10], &avg_target(4.0, 1.0)).unwrap();
        assert!((p.item() - 0.125).abs() < 1e-15);
        let p = avg_bit_penalty(&bits(&[2.0, 13.0]), &[1, 1], &avg_target(4.0, 0.0)).unwrap();
        assert_eq!(p.item(), 0.0);
    }

    #[test]
    fn avg_bit_rejects_bad_lists() {
        let t = avg_target(4.0, 1.0);
        assert!(avg_bit_penalty::<f64>(&[], &[], &t).is_err());
        assert!(avg_bit_penalty(&bits(&[4.0]), &[1, 2], &t).is_err());
    }

    #[test]
    fn penalty_gradient_pushes_bits_down_when_over_budget() {
        let b = bits(&[6.0, 5.0, 4.5]);
        let p = avg_bit_penalty(&b, &[10, 100, 1], &avg_target(4.0, 2.0)).unwrap();
        p.backward().unwrap();
        for bi in &b {
            assert!(bi.grad().unwrap()[0] > 0.0);
        }
    }

    #[test]
    fn layer_bops_examples() {
        // Full-precision ResNet-18 reference: 1857.6 G bit-operations at 32/32 bits.
        let cost = LayerCost {
            macs: 1_814_062_500,
            ..Default::default()
        };
        let b = layer_bops(&cost, &Tensor::<f64>::scalar(32.0), &Tensor::scalar(32.0)).unwrap();
        assert_eq!(b.item(), 1857.6e9);
        assert_eq!(layer_bops_exact(&cost, 32, 32), 1_857_600_000_000);
        let small = LayerCost {
            macs: 1000,
            ..Default::default()
        };
        let four = Tensor::<f32>::scalar(4.0);
        assert_eq!(layer_bops(&small, &four, &four).unwrap().item(), 16000.0);
        let eight = Tensor::<f32>::scalar(8.0);
        assert_eq!(layer_bops(&small, &eight, &four).unwrap().item(), 32000.0);
    }

    #[test]
    fn bops_penalty_examples() {
        let cost = LayerCost {
            macs: 1000,
            ..Default::default()
        };
        let layer = |bw: f64, ba: f64| (cost, Tensor::scalar_param(bw), Tensor::scalar_param(ba));
        let on_target = ResourceTarget::new(ResourceKind::Bops, 16000.0, 1.0).unwrap();
        let p = bops_penalty(&[layer(4.0, 4.0)], &on_target).unwrap();
        assert_eq!(p.item(), 0.0);
        let p = bops_penalty(&[layer(6.0, 4.0)], &on_target).unwrap();
        assert!((p.item() - 0.125).abs() < 1e-15);

        let layers = [layer(6.0, 5.0), layer(3.0, 7.0)];
        bops_penalty(&layers, &on_target).unwrap().backward().unwrap();
        for (_, bw, ba) in &layers {
            assert!(bw.grad().unwrap()[0] >= 0.0);
            assert!(ba.grad().unwrap()[0] >= 0.0);
        }
        assert!(ResourceTarget::new(ResourceKind::Bops, 0.0, 1.0).is_err());
        assert!(bops_penalty::<f64>(&[], &on_target).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let task = Tensor::<f64>::scalar(1.0);
        assert_eq!(total_loss(&task, &[]).unwrap().item(), 1.0);
        let z = [Tensor::scalar(0.0), Tensor::scalar(0.0)];
        assert_eq!(total_loss(&task, &z).unwrap().item(), 1.0);
        let p = [Tensor::scalar(0.1), Tensor::scalar(0.2)];
        assert!((total_loss(&task, &p).unwrap().item() - 1.3).abs() < 1e-15);
    }

    #[test]
    fn target_json_rejects_unknown_keys() {
        let ok: ResourceTarget = serde_json::from_str(r#"{"kind":"avg_bit_weight","target":4,"lambda":1}"#).unwrap();
        assert_eq!(ok.huber_delta, 1.0);
        assert!(serde_json::from_str::<ResourceTarget>(r#"{"kind":"avg_bit_weight","target":4,"lambda":1,"lamda":2}"#).is_err());
    }

    proptest! {
        #[test]
        fn zero_exactly_at_target_positive_elsewhere(
            b in proptest::collection::vec(2.0f64..14.0, 1..6),
            lambda in 0.01f64..5.0,
        ) {
            let elems: Vec<usize> = (0..b.len()).map(|i| 10 + 7 * i).collect();
            let total: usize = elems.iter().sum();
            let avg: f64 = b.iter().zip(&elems).map(|(x, &e)| x * e as f64).sum::<f64>() / total as f64;
            let tb = bits(&b);
            let at = avg_bit_penalty(&tb, &elems, &avg_target(avg, lambda)).unwrap().item();
            prop_assert!(at.abs() < 1e-12);
            let off = avg_bit_penalty(&tb, &elems, &avg_target(avg + 0.3, lambda)).unwrap().item();
            prop_assert!(off > 0.0);
        }

        #[test]
        fn penalty_is_linear_in_lambda(
            b in proptest::collection::vec(2.0f64..14.0, 1..6),
            lambda in 0.01f64..5.0,
            t in 2.5f64..8.0,
        ) {
            let elems = vec![3usize; b.len()];
            let one = avg_bit_penalty(&bits(&b), &elems, &avg_target(t, 1.0)).unwrap().item();
            let scaled = avg_bit_penalty(&bits(&b), &elems, &avg_target(t, lambda)).unwrap().item();
            prop_assert!((scaled - lambda * one).abs() <= 1e-12 * (1.0 + scaled.abs()));
        }

        #[test]
        fn integer_bops_are_exact(macs in 1u64..1_000_000, bw in 1u32..16, ba in 1u32..16) {
            let cost = LayerCost { macs, ..Default::default() };
            let v = layer_bops(&cost, &Tensor::<f64>::scalar(bw as f64), &Tensor::scalar(ba as f64)).unwrap().item();
            prop_assert_eq!(v, layer_bops_exact(&cost, bw, ba) as f64);
        }
    }
}
