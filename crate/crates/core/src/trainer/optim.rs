use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    #[default]
    Adam,
}

pub const SGD_MOMENTUM: f64 = 0.9;
pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

/// Linear warmup from 0 to `lr` over `warmup` steps, then cosine decay to
/// `lr * eta_min_ratio` at the final step.
pub fn cosine_warmup_lr(step: usize, total: usize, warmup: usize, lr: f64, eta_min_ratio: f64) -> Result<f64> {
    if warmup >= total {
        return Err(invalid(format!("warmup {warmup} must be shorter than the run ({total} steps)")));
    }
    if step >= total {
        return Err(invalid(format!("step {step} outside run of {total} steps")));
    }
    if !(eta_min_ratio > 0.0 && eta_min_ratio <= 1.0) {
        return Err(invalid(format!("eta_min_ratio must lie in (0, 1], got {eta_min_ratio}")));
    }
    if step < warmup {
        return Ok(lr * step as f64 / warmup as f64);
    }
    let span = total - warmup - 1;
    if span == 0 {
        return Ok(lr);
    }
    let t = (step - warmup) as f64 / span as f64;
    Ok(lr * (eta_min_ratio + (1.0 - eta_min_ratio) * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0))
}

#[derive(Clone, Debug)]
enum Slot<T> {
    Empty,
    Momentum(Vec<T>),
    Adam { m: Vec<T>, v: Vec<T>, t: i32 },
}

/// One parameter handed to [`Optimizer::step`].
pub struct Update<'a, T: Scalar> {
    pub tensor: &'a Tensor<T>,
    pub lr: f64,
    pub weight_decay: f64,
}

/// SGD with momentum or Adam, with per-parameter state keyed by tensor
/// identity, so the set of updated tensors may change between phases.
#[derive(Clone, Debug)]
pub struct Optimizer<T: Scalar> {
    pub kind: OptimizerKind,
    slots: HashMap<u64, Slot<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            slots: HashMap::new(),
        }
    }

    /// Applies one update per entry. Tensors without a gradient are treated
    /// as having a zero one. Weight decay is added to the gradient
    /// (`g + wd * w`).
    pub fn step(&mut self, updates: &[Update<'_, T>]) {
        for u in updates {
            let slot = self.slots.entry(u.tensor.id()).or_insert(Slot::Empty);
            let mut g = u.tensor.grad_or_zeros();
            let wd = T::lit(u.weight_decay);
            let lr = T::lit(u.lr);
            let w = u.tensor.to_vec();
            if u.weight_decay != 0.0 {
                for (gi, &wi) in g.iter_mut().zip(&w) {
                    *gi = *gi + wd * wi;
                }
            }
            let delta = match self.kind {
                OptimizerKind::SgdMomentum => sgd_momentum_delta(slot, &g),
                OptimizerKind::Adam => adam_delta(slot, &g),
            };
            u.tensor.update_data(|d| {
                for (x, &s) in d.iter_mut().zip(&delta) {
                    *x = *x - lr * s;
                }
            });
        }
    }
}

fn sgd_momentum_delta<T: Scalar>(slot: &mut Slot<T>, g: &[T]) -> Vec<T> {
    let mu = T::lit(SGD_MOMENTUM);
    match slot {
        Slot::Momentum(buf) => {
            for (b, &gi) in buf.iter_mut().zip(g) {
                *b = mu * *b + gi;
            }
        }
        _ => *slot = Slot::Momentum(g.to_vec()),
    }
    let Slot::Momentum(buf) = slot else { unreachable!() };
    buf.clone()
}

fn adam_delta<T: Scalar>(slot: &mut Slot<T>, g: &[T]) -> Vec<T> {
    if !matches!(slot, Slot::Adam { .. }) {
        *slot = Slot::Adam {
            m: vec![T::zero(); g.len()],
            v: vec![T::zero(); g.len()],
            t: 0,
        };
    }
    let Slot::Adam { m, v, t } = slot else { unreachable!() };
    let (b1, b2) = (T::lit(ADAM_BETAS.0), T::lit(ADAM_BETAS.1));
    *t += 1;
    let c1 = T::one() - b1.powi(*t);
    let c2 = T::one() - b2.powi(*t);
    let eps = T::lit(ADAM_EPS);
    m.iter_mut()
        .zip(v.iter_mut())
        .zip(g)
        .map(|((mi, vi), &gi)| {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            (*mi / c1) / ((*vi / c2).sqrt() + eps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_follows_the_tensor_when_the_update_set_changes() {
        let run = |with_a: bool| {
            let a = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
            let b = Tensor::<f64>::param(&[3], vec![1.0, -1.0, 0.5]).unwrap();
            let mut opt = Optimizer::new(OptimizerKind::Adam);
            for step in 0..4 {
                let loss = a.square().sum().add(&b.square().sum().mul_scalar(3.0)).unwrap();
                a.zero_grad();
                b.zero_grad();
                loss.backward().unwrap();
                let ua = Update {
                    tensor: &a,
                    lr: 0.1,
                    weight_decay: 0.0,
                };
                let ub = Update {
                    tensor: &b,
                    lr: 0.1,
                    weight_decay: 0.0,
                };
                if with_a && step < 2 {
                    opt.step(&[ua, ub]);
                } else {
                    opt.step(&[ub]);
                }
            }
            b.to_vec()
        };
        assert_eq!(run(true), run(false));
    }

    #[test]
    fn schedule_examples() {
        let (lr, eta) = (0.04, 1e-3);
        assert_eq!(cosine_warmup_lr(3, 20, 3, lr, eta).unwrap(), lr);
        assert!((cosine_warmup_lr(19, 20, 3, lr, eta).unwrap() - lr * eta).abs() < 1e-15);
        // decay spans steps 3..=19, midpoint step 11
        let mid = cosine_warmup_lr(11, 20, 3, lr, eta).unwrap();
        assert!((mid - lr * (eta + (1.0 - eta) / 2.0)).abs() < 1e-15);
        assert_eq!(cosine_warmup_lr(0, 20, 3, lr, eta).unwrap(), 0.0);
        assert!(cosine_warmup_lr(0, 3, 3, lr, eta).is_err());
        assert!(cosine_warmup_lr(5, 5, 0, lr, eta).is_err());
        assert!(cosine_warmup_lr(0, 5, 0, lr, 0.0).is_err());
    }

    #[test]
    fn schedule_is_monotone_after_warmup() {
        let lrs: Vec<f64> = (0..50).map(|s| cosine_warmup_lr(s, 50, 5, 1.0, 0.01).unwrap()).collect();
        assert!(lrs[..=5].windows(2).all(|w| w[0] <= w[1]));
        assert!(lrs[5..].windows(2).all(|w| w[0] >= w[1]));
    }

    fn half_square_grad(w: &Tensor<f64>) {
        w.zero_grad();
        w.square().sum().mul_scalar(0.5).backward().unwrap();
    }

    #[test]
    fn sgd_first_step_on_half_square() {
        let w = Tensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        half_square_grad(&w);
        let mut opt = Optimizer::new(OptimizerKind::SgdMomentum);
        opt.step(&[Update {
            tensor: &w,
            lr: 0.1,
            weight_decay: 0.0,
        }]);
        assert_eq!(w.to_vec(), vec![0.9, -1.8, 0.45]);
        // second step carries momentum: v = 0.9 * g0 + g1
        half_square_grad(&w);
        opt.step(&[Update {
            tensor: &w,
            lr: 0.1,
            weight_decay: 0.0,
        }]);
        let expect = 0.9 - 0.1 * (0.9 * 1.0 + 0.9);
        assert!((w.to_vec()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_regardless_of_scale() {
        for scale in [1e-4, 1.0, 1e4] {
            let w = Tensor::param(&[2], vec![scale, -scale]).unwrap();
            half_square_grad(&w);
            let mut opt = Optimizer::new(OptimizerKind::Adam);
            opt.step(&[Update {
                tensor: &w,
                lr: 0.01,
                weight_decay: 0.0,
            }]);
            let moved = (w.to_vec()[0] - scale).abs();
            // eps = 1e-8 costs at most 1e-4 relative at the smallest scale
            assert!((moved - 0.01).abs() < 1e-5, "{scale}: {moved}");
        }
    }

    #[test]
    fn zero_grad_zero_decay_leaves_params() {
        for kind in [OptimizerKind::SgdMomentum, OptimizerKind::Adam] {
            let w = Tensor::param(&[2], vec![0.3f32, -0.7]).unwrap();
            let mut opt = Optimizer::new(kind);
            for _ in 0..3 {
                opt.step(&[Update {
                    tensor: &w,
                    lr: 0.5,
                    weight_decay: 0.0,
                }]);
            }
            assert_eq!(w.to_vec(), vec![0.3, -0.7]);
        }
    }

    #[test]
    fn decay_alone_shrinks_weights() {
        let w = Tensor::param(&[1], vec![2.0f64]).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::SgdMomentum);
        opt.step(&[Update {
            tensor: &w,
            lr: 0.1,
            weight_decay: 0.5,
        }]);
        assert!((w.item() - 1.9).abs() < 1e-15);
    }
}
