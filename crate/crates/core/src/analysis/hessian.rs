//! Hutchinson trace estimation.
//!
//! Hessian-vector products come from central differences of reverse-mode
//! gradients, `Hv ~ (g(p + h v) - g(p - h v)) / 2h` with
//! `h = 1e-3 * |p| / |v|`, so no second-order autodiff is needed. The
//! difference is exact for quadratics up to rounding; elsewhere its error is
//! O(h^2) times the third derivative. Run in f64 for tight estimates.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model_zoo::{Dataset, Forward, Network};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::trainer::task_loss;
use crate::Scalar;

pub const HVP_REL_STEP: f64 = 1e-3;

/// Parameters whose diagonal Hessian block is traced together.
#[derive(Clone, Debug)]
pub struct ParamGroup<T: Scalar> {
    pub name: String,
    pub params: Vec<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTrace {
    pub name: String,
    pub trace: f64,
    /// Standard error of the probe mean.
    pub std_err: f64,
    pub n_elements: usize,
    pub trace_per_element: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub groups: Vec<GroupTrace>,
    pub n_probes: usize,
}

impl TraceReport {
    pub fn group(&self, name: &str) -> Option<&GroupTrace> {
        self.groups.iter().find(|g| g.name == name)
    }
}

fn gradients<T: Scalar>(loss_fn: &mut impl FnMut() -> Result<Tensor<T>>, params: &[Tensor<T>]) -> Result<Vec<Vec<T>>> {
    for p in params {
        p.zero_grad();
    }
    loss_fn()?.backward()?;
    Ok(params.iter().map(Tensor::grad_or_zeros).collect())
}

fn shift<T: Scalar>(params: &[Tensor<T>], base: &[Vec<T>], v: &[Vec<T>], h: T) -> Result<()> {
    for ((p, b), d) in params.iter().zip(base).zip(v) {
        p.set_data(b.iter().zip(d).map(|(&x, &y)| x + h * y).collect())?;
    }
    Ok(())
}

/// Mean of `v^T H v` over Rademacher probes, one estimate per group.
/// Parameter values are restored exactly afterwards.
pub fn hessian_trace<T: Scalar>(
    mut loss_fn: impl FnMut() -> Result<Tensor<T>>,
    groups: &[ParamGroup<T>],
    n_probes: usize,
    rng: &mut RngStream,
) -> Result<TraceReport> {
    if n_probes < 2 {
        return Err(invalid(format!(
            "hessian_trace needs at least 2 probes for an error bar, got {n_probes}"
        )));
    }
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let base: Vec<Vec<T>> = g.params.iter().map(Tensor::to_vec).collect();
        let n_elements: usize = base.iter().map(Vec::len).sum();
        if n_elements == 0 {
            return Err(invalid(format!("group {} is empty", g.name)));
        }
        let p_norm = base.iter().flatten().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        let v_norm = (n_elements as f64).sqrt();
        let h = HVP_REL_STEP * if p_norm > 0.0 { p_norm } else { 1.0 } / v_norm;
        let mut samples = Vec::with_capacity(n_probes);
        let result = (|| -> Result<()> {
            for _ in 0..n_probes {
                let v: Vec<Vec<T>> = base.iter().map(|b| rng.rademacher_vec(b.len())).collect();
                shift(&g.params, &base, &v, T::lit(h))?;
                let gp = gradients(&mut loss_fn, &g.params)?;
                shift(&g.params, &base, &v, T::lit(-h))?;
                let gm = gradients(&mut loss_fn, &g.params)?;
                let mut vhv = 0.0;
                for ((vi, a), b) in v.iter().zip(&gp).zip(&gm) {
                    for ((&s, &x), &y) in vi.iter().zip(a).zip(b) {
                        vhv += s.as_f64() * (x.as_f64() - y.as_f64());
                    }
                }
                samples.push(vhv / (2.0 * h));
            }
            Ok(())
        })();
        for (p, b) in g.params.iter().zip(&base) {
            p.set_data(b.clone())?;
            p.zero_grad();
        }
        result?;
        let (mean, se) = mean_and_std_err(&samples);
        out.push(GroupTrace {
            name: g.name.clone(),
            trace: mean,
            std_err: se,
            n_elements,
            trace_per_element: mean / n_elements as f64,
        });
    }
    Ok(TraceReport { groups: out, n_probes })
}

pub(crate) fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One group per layer holding its weight tensor, named `l<i>.weight`.
/// With `quantized_only`, layers without a weight quantizer are skipped.
pub fn layer_weight_groups<T: Scalar>(net: &Network<T>, quantized_only: bool) -> Vec<ParamGroup<T>> {
    net.blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| !quantized_only || b.layer.w_quant.is_some())
        .map(|(i, b)| ParamGroup {
            name: format!("l{i}.weight"),
            params: vec![b.layer.weight.clone()],
        })
        .collect()
}

/// Per-layer weight traces of the full-precision task loss on the first
/// `max_samples` rows of `data` (running BN statistics, quantizers bypassed).
pub fn network_traces<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    max_samples: usize,
    quantized_only: bool,
    n_probes: usize,
    seed: u64,
) -> Result<TraceReport> {
    let idx: Vec<usize> = (0..data.len().min(max_samples)).collect();
    let (x, y) = data.batch(&idx)?;
    let loss = || task_loss(&net.forward(&x, &mut Forward::eval().full_precision())?, &y);
    let mut rng = RngStream::new(seed, 0x4E55_1A4E);
    hessian_trace(loss, &layer_weight_groups(net, quantized_only), n_probes, &mut rng)
}
