//! Probes for the two convergence arguments behind noise injection.
//!
//! Noise on the weights: for `L(w) = 1/2 w^T H w + c^T w` and
//! `u ~ U[-1, 1]^d`, `E[L(w + eps u)] = L(w) + eps^2/6 Tr(H)` exactly, so
//! gradient descent on the sampled loss drives `eps` to zero.
//!
//! Truncation: when clipping error dominates, the boundary gradient of the
//! task loss is negative and the learned boundary grows.

use serde::{Deserialize, Serialize};

use super::stats::spearman;
use crate::error::{invalid, Result};
use crate::model_zoo::{Dataset, Forward, LayerSpec, Network, NetworkSpec, Targets};
use crate::quant::{alpha_to_raw, QuantMode, Quantizer};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::trainer::{task_loss, Optimizer, OptimizerKind, Update};

/// `1/2 w^T H w + c^T w` with a dense symmetric `H` (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    pub dim: usize,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl Quadratic {
    pub fn new(dim: usize, h: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if h.len() != dim * dim || c.len() != dim {
            return Err(invalid(format!(
                "quadratic of dim {dim} needs {} Hessian and {dim} linear entries",
                dim * dim
            )));
        }
        for i in 0..dim {
            for j in 0..i {
                if h[i * dim + j] != h[j * dim + i] {
                    return Err(invalid("Hessian must be symmetric"));
                }
            }
        }
        Ok(Self { dim, h, c })
    }

    /// `H = A A^T / d + I` with Gaussian `A`, no linear term.
    pub fn random_pd(dim: usize, rng: &mut RngStream) -> Self {
        let a: Vec<f64> = rng.normal_vec(dim * dim);
        let mut h = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let dot: f64 = (0..dim).map(|k| a[i * dim + k] * a[j * dim + k]).sum();
                h[i * dim + j] = dot / dim as f64 + if i == j { 1.0 } else { 0.0 };
            }
        }
        // exact symmetry regardless of summation order
        for i in 0..dim {
            for j in 0..i {
                h[i * dim + j] = h[j * dim + i];
            }
        }
        Self { dim, h, c: vec![0.0; dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut h = vec![0.0; dim * dim];
        for i in 0..dim {
            h[i * dim + i] = 1.0;
        }
        Self { dim, h, c: vec![0.0; dim] }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.h[i * self.dim + i]).sum()
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        let d = self.dim;
        let mut q = 0.0;
        for i in 0..d {
            let hw: f64 = (0..d).map(|j| self.h[i * d + j] * w[j]).sum();
            q += w[i] * (0.5 * hw + self.c[i]);
        }
        q
    }

    /// `L(w) + eps^2/6 Tr(H)`.
    pub fn expected_noisy_loss(&self, w: &[f64], eps: f64) -> f64 {
        self.eval(w) + eps * eps / 6.0 * self.trace()
    }

    /// Sample mean of `L(w + eps u)`.
    pub fn monte_carlo_loss(&self, w: &[f64], eps: f64, n_samples: usize, rng: &mut RngStream) -> f64 {
        let mut z = vec![0.0; self.dim];
        let mut acc = 0.0;
        for _ in 0..n_samples {
            for (zi, wi) in z.iter_mut().zip(w) {
                *zi = wi + eps * (2.0 * rng.uniform::<f64>() - 1.0);
            }
            acc += self.eval(&z);
        }
        acc / n_samples as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseShrinkConfig {
    pub eps_init: f64,
    pub n_steps: usize,
    pub lr: f64,
    /// Noise draws per gradient step.
    pub samples_per_step: usize,
    pub train_w: bool,
    /// Samples for the closed-form check at the initial point.
    pub mc_samples: usize,
}

impl Default for NoiseShrinkConfig {
    fn default() -> Self {
        Self {
            eps_init: 0.6,
            n_steps: 400,
            lr: 0.1,
            samples_per_step: 16,
            train_w: false,
            mc_samples: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseShrinkReport {
    pub trace_h: f64,
    /// `eps` before each step, plus the final value.
    pub eps: Vec<f64>,
    pub eps_grad: Vec<f64>,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub relative_error: f64,
    pub w_final: Vec<f64>,
}

/// Trains `eps` (and `w` if configured) by gradient descent on the sampled
/// loss `mean_k L(w + eps u_k)`, through the autodiff engine.
pub fn noise_shrink_probe(q: &Quadratic, w0: &[f64], cfg: &NoiseShrinkConfig, rng: &mut RngStream) -> Result<NoiseShrinkReport> {
    let d = q.dim;
    if w0.len() != d {
        return Err(invalid(format!("w0 has {} entries, quadratic has dim {d}", w0.len())));
    }
    if cfg.samples_per_step == 0 || !(cfg.eps_init >= 0.0) {
        return Err(invalid("noise-shrink probe needs samples_per_step >= 1 and eps_init >= 0"));
    }
    let closed_form = q.expected_noisy_loss(w0, cfg.eps_init);
    let monte_carlo = q.monte_carlo_loss(w0, cfg.eps_init, cfg.mc_samples, &mut rng.substream(0x3C));
    let relative_error = if closed_form != 0.0 {
        (monte_carlo - closed_form).abs() / closed_form.abs()
    } else {
        (monte_carlo - closed_form).abs()
    };

    let h = Tensor::from_vec(&[d, d], q.h.clone())?;
    let c = Tensor::from_vec(&[d, 1], q.c.clone())?;
    let w = Tensor::param(&[1, d], w0.to_vec())?;
    let eps = Tensor::scalar_param(cfg.eps_init);
    let m = cfg.samples_per_step;
    let mut eps_traj = vec![cfg.eps_init];
    let mut grads = Vec::with_capacity(cfg.n_steps);
    for _ in 0..cfg.n_steps {
        let u: Vec<f64> = rng.uniform_vec::<f64>(m * d).into_iter().map(|v| 2.0 * v - 1.0).collect();
        let u = Tensor::from_vec(&[m, d], u)?;
        let z = u.mul(&eps)?.add(&w)?;
        let quad = z.matmul(&h)?.mul(&z)?.sum().mul_scalar(0.5);
        let loss = quad.add(&z.matmul(&c)?.sum())?.div_scalar(m as f64);
        eps.zero_grad();
        w.zero_grad();
        loss.backward()?;
        let g = eps.grad_or_zeros()[0];
        grads.push(g);
        eps.update_data(|e| e[0] = (e[0] - cfg.lr * g).max(0.0));
        if cfg.train_w {
            let gw = w.grad_or_zeros();
            w.update_data(|wd| {
                for (x, gx) in wd.iter_mut().zip(&gw) {
                    *x -= cfg.lr * gx;
                }
            });
        }
        eps_traj.push(eps.item());
    }
    Ok(NoiseShrinkReport {
        trace_h: q.trace(),
        eps: eps_traj,
        eps_grad: grads,
        closed_form,
        monte_carlo,
        relative_error,
        w_final: w.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipGrowthConfig {
    pub n_steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub bit: u32,
}

impl Default for ClipGrowthConfig {
    fn default() -> Self {
        Self {
            n_steps: 200,
            batch_size: 64,
            optimizer: OptimizerKind::SgdMomentum,
            lr: 0.05,
            bit: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipGrowthReport {
    pub max_abs_input: f64,
    /// Boundary before each step, plus the final value.
    pub alpha: Vec<f64>,
    /// Single-batch `dL/d alpha` at each step.
    pub alpha_grad: Vec<f64>,
    pub loss: Vec<f64>,
    pub negative_grad_fraction: f64,
    /// Rank correlation of the boundary with the step index.
    pub spearman_rho: Option<f64>,
    pub relative_drift: f64,
}

/// Single dense layer whose input passes through an unsigned activation
/// quantizer; weights are full precision and the teacher is the same layer
/// without quantization, so all error comes from the quantizer.
pub fn clip_growth_instance(n: usize, dim: usize, seed: u64) -> Result<(Network<f64>, Dataset<f64>)> {
    let mut layer = LayerSpec::dense(1, false);
    layer.quantize = Some(true);
    let mut spec = NetworkSpec::new(vec![dim], vec![layer]);
    spec.quantize_weights = false;
    let net = Network::<f64>::build(&spec, seed)?;
    let mut rng = RngStream::new(seed, 0x1E_3A2);
    let w: Vec<f64> = rng.uniform_vec::<f64>(dim).into_iter().map(|u| (0.5 + u) / dim as f64).collect();
    net.blocks[0].layer.weight.set_data(w.clone())?;
    if let Some(b) = &net.blocks[0].layer.bias {
        b.set_data(vec![0.0])?;
    }
    // Nonnegative heavy-ish tailed features: |N(0, 1)|.
    let x: Vec<f64> = rng.normal_vec::<f64>(n * dim).into_iter().map(f64::abs).collect();
    let y: Vec<f64> = x.chunks(dim).map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
    let data = Dataset::new(
        "clip-growth",
        Tensor::from_vec(&[n, dim], x)?,
        Targets::Values(Tensor::from_vec(&[n, 1], y)?),
    )?;
    Ok((net, data))
}

/// Sets the activation boundary to `init_alpha_fraction * max|x|` and trains
/// only that boundary in quantization mode at a fixed bit-width.
pub fn clip_growth_probe(
    net: &mut Network<f64>,
    data: &Dataset<f64>,
    init_alpha_fraction: f64,
    cfg: &ClipGrowthConfig,
    seed: u64,
) -> Result<ClipGrowthReport> {
    if net.blocks.len() != 1 {
        return Err(invalid("clip-growth probe expects a single-layer network"));
    }
    let max_abs = data.inputs.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let alpha_raw = {
        let q = net.blocks[0]
            .layer
            .a_quant
            .as_mut()
            .ok_or_else(|| invalid("clip-growth probe needs an activation quantizer"))?;
        q.set_mode(QuantMode::Quant);
        let Quantizer::Nipq(p) = q else {
            return Err(invalid("clip-growth probe needs a truncation boundary"));
        };
        p.set_frozen_bit(Some(cfg.bit));
        p.alpha_raw.set_data(vec![alpha_to_raw(init_alpha_fraction * max_abs)?])?;
        p.alpha_raw.clone()
    };
    let net = &*net;
    let alpha_of = |raw: f64| if raw > 30.0 { raw } else { raw.exp().ln_1p() };
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut rng = RngStream::new(seed, 0x1E_3A3);
    let mut alpha = vec![alpha_of(alpha_raw.item())];
    let (mut grads, mut losses) = (Vec::new(), Vec::new());
    let mut batches = Vec::new();
    for _ in 0..cfg.n_steps {
        if batches.is_empty() {
            batches = data.batch_indices(cfg.batch_size, Some(&mut rng));
            batches.reverse();
        }
        let idx = batches.pop().unwrap_or_default();
        let (x, y) = data.batch(&idx)?;
        for p in net.named_params() {
            p.tensor.zero_grad();
        }
        let loss = task_loss(&net.forward(&x, &mut Forward::eval())?, &y)?;
        loss.backward()?;
        let raw = alpha_raw.item();
        // d alpha / d raw = sigmoid(raw) > 0, so signs agree
        let sig = 1.0 / (1.0 + (-raw).exp());
        grads.push(alpha_raw.grad_or_zeros()[0] / sig);
        losses.push(loss.item());
        opt.step(&[Update {
            tensor: &alpha_raw,
            lr: cfg.lr,
            weight_decay: 0.0,
        }]);
        alpha.push(alpha_of(alpha_raw.item()));
    }
    let steps: Vec<f64> = (0..alpha.len()).map(|i| i as f64).collect();
    let neg = grads.iter().filter(|&&g| g < 0.0).count();
    let first = alpha[0];
    let last = *alpha.last().unwrap_or(&first);
    Ok(ClipGrowthReport {
        max_abs_input: max_abs,
        negative_grad_fraction: if grads.is_empty() { 0.0 } else { neg as f64 / grads.len() as f64 },
        spearman_rho: spearman(&steps, &alpha),
        relative_drift: (last - first).abs() / first,
        alpha,
        alpha_grad: grads,
        loss: losses,
    })
}
