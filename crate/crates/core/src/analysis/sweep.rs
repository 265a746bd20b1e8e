//! Boundary-scaling robustness sweeps and 2-D loss-landscape slices.
//!
//! Sweeps scale every targeted boundary `alpha` by a factor at a fixed bit,
//! which scales the step size by the same factor. Both instruments restore
//! the exact parameter bits they touched.

use serde::{Deserialize, Serialize};

use super::stats::trapezoid;
use crate::error::{invalid, Result};
use crate::model_zoo::{Dataset, Network, ParamKind};
use crate::quant::{QuantMode, Quantizer, TensorRole};
use crate::rng::RngStream;
use crate::trainer::{evaluate, evaluate_quantized, EvalMetrics};
use crate::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTarget {
    Activation,
    Weight,
    #[default]
    Both,
}

impl SweepTarget {
    fn covers(self, role: TensorRole) -> bool {
        matches!(
            (self, role),
            (SweepTarget::Both, _) | (SweepTarget::Weight, TensorRole::Weight) | (SweepTarget::Activation, TensorRole::Activation)
        )
    }
}

impl std::str::FromStr for SweepTarget {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activation" => Ok(Self::Activation),
            "weight" => Ok(Self::Weight),
            "both" => Ok(Self::Both),
            _ => Err(invalid(format!("sweep target must be activation, weight or both, got {s}"))),
        }
    }
}

/// Metric per factor per variant, `metrics[variant][factor]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub factors: Vec<f64>,
    pub labels: Vec<String>,
    pub metrics: Vec<Vec<f64>>,
    pub losses: Vec<Vec<f64>>,
    /// Accuracy is higher-better; regression MSE is lower-better.
    pub higher_is_better: bool,
}

impl SweepResult {
    /// Integrated metric degradation relative to factor 1 over `[lo, hi]`.
    pub fn drop_auc(&self, variant: usize, lo: f64, hi: f64) -> Result<f64> {
        let base_i = self.base_index()?;
        let row = &self.metrics[variant];
        let base = row[base_i];
        let mut pts: Vec<(f64, f64)> = self
            .factors
            .iter()
            .zip(row)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(&f, &m)| (f, if self.higher_is_better { base - m } else { m - base }))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.len() < 2 {
            return Err(invalid(format!("need at least two factors in [{lo}, {hi}]")));
        }
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        Ok(trapezoid(&x, &y))
    }

    fn base_index(&self) -> Result<usize> {
        self.factors
            .iter()
            .position(|&f| f == 1.0)
            .ok_or_else(|| invalid("sweep factors must include 1.0"))
    }
}

pub fn check_factors(factors: &[f64]) -> Result<()> {
    if !factors.contains(&1.0) {
        return Err(invalid("sweep factors must include 1.0"));
    }
    if let Some(f) = factors.iter().find(|f| !(**f >= 0.0) || !f.is_finite()) {
        return Err(invalid(format!("sweep factors must be finite and >= 0, got {f}")));
    }
    Ok(())
}

/// Evaluates `net` in quantization mode with targeted boundaries scaled by
/// each factor. Factor 1 leaves the network untouched; factor 0 collapses
/// the boundary so every level is zero.
pub fn robustness_sweep<T: Scalar>(
    net: &mut Network<T>,
    data: &Dataset<T>,
    factors: &[f64],
    target: SweepTarget,
    batch_size: usize,
) -> Result<Vec<EvalMetrics>> {
    check_factors(factors)?;
    let raws: Vec<_> = net
        .quantizers()
        .into_iter()
        .filter(|(_, role, _)| target.covers(*role))
        .map(|(name, _, q)| match q {
            Quantizer::Nipq(p) => Ok(p.alpha_raw.clone()),
            Quantizer::MinMax(_) => Err(invalid(format!("{name} has no truncation boundary to scale"))),
        })
        .collect::<Result<_>>()?;
    let saved: Vec<Vec<T>> = raws.iter().map(|r| r.to_vec()).collect();
    let mut out = Vec::with_capacity(factors.len());
    for &f in factors {
        if f != 1.0 {
            for (r, s) in raws.iter().zip(&saved) {
                let raw = if f == 0.0 {
                    T::neg_infinity()
                } else {
                    let alpha = crate::tensor::softplus_scalar(s[0]) * T::lit(f);
                    crate::quant::alpha_to_raw(alpha)?
                };
                r.set_data(vec![raw])?;
            }
        }
        let m = evaluate_quantized(net, data, batch_size);
        for (r, s) in raws.iter().zip(&saved) {
            r.set_data(s.clone())?;
        }
        out.push(m?);
    }
    Ok(out)
}

/// Sweeps every labelled variant with the same factors.
pub fn sweep_variants<T: Scalar>(
    variants: &mut [(String, Network<T>)],
    data: &Dataset<T>,
    factors: &[f64],
    target: SweepTarget,
    batch_size: usize,
) -> Result<SweepResult> {
    let mut metrics = Vec::new();
    let mut losses = Vec::new();
    for (_, net) in variants.iter_mut() {
        let rows = robustness_sweep(net, data, factors, target, batch_size)?;
        metrics.push(rows.iter().map(EvalMetrics::metric).collect());
        losses.push(rows.iter().map(|m| m.loss).collect());
    }
    Ok(SweepResult {
        factors: factors.to_vec(),
        labels: variants.iter().map(|(l, _)| l.clone()).collect(),
        metrics,
        losses,
        higher_is_better: data.n_classes().is_some(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub radius: f64,
    /// Offsets along each direction, symmetric with an exact 0 at the center.
    pub coords: Vec<f64>,
    /// `loss[i][j]` at `w + coords[i] d1 + coords[j] d2`.
    pub loss: Vec<Vec<f64>>,
    pub center_loss: f64,
    pub mode: QuantMode,
}

impl LandscapeGrid {
    /// Mean of `loss - center_loss` over the grid.
    pub fn mean_increase(&self) -> f64 {
        let n = self.coords.len().pow(2) as f64;
        self.loss.iter().flatten().map(|l| l - self.center_loss).sum::<f64>() / n
    }

    /// Flat matrix text: one JSON header line, then one row of losses per line.
    pub fn to_text(&self, meta: serde_json::Value) -> Result<String> {
        let header = serde_json::json!({
            "radius": self.radius,
            "coords": self.coords,
            "rows": self.coords.len(),
            "cols": self.coords.len(),
            "center_loss": self.center_loss,
            "mode": self.mode,
            "meta": meta,
        });
        let mut s = serde_json::to_string(&header)?;
        s.push('\n');
        for row in &self.loss {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        Ok(s)
    }
}

/// Gaussian direction rescaled so each output filter (conv) or row (dense)
/// has the norm of the matching weight filter.
fn filter_normalized<T: Scalar>(w: &[T], shape: &[usize], rng: &mut RngStream) -> Vec<f64> {
    let mut d: Vec<f64> = rng.normal_vec(w.len());
    let rows = shape.first().copied().unwrap_or(1).max(1);
    let per = w.len() / rows;
    for r in 0..rows {
        let span = r * per..(r + 1) * per;
        let wn = w[span.clone()].iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        let dn = d[span.clone()].iter().map(|v| v.powi(2)).sum::<f64>().sqrt();
        let s = if dn > 0.0 { wn / dn } else { 0.0 };
        for v in &mut d[span] {
            *v *= s;
        }
    }
    d
}

/// Task loss over a `grid x grid` slice spanned by two filter-normalized
/// random directions on the layer weights, in the quantizers' current modes.
/// `grid` must be odd so the center is the unperturbed network.
pub fn landscape_slice<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    grid: usize,
    radius: f64,
    rng: &mut RngStream,
    batch_size: usize,
) -> Result<LandscapeGrid> {
    if grid < 3 || grid.is_multiple_of(2) {
        return Err(invalid(format!("landscape grid must be odd and >= 3, got {grid}")));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid(format!("landscape radius must be positive, got {radius}")));
    }
    let weights: Vec<_> = net.named_params().into_iter().filter(|p| p.kind == ParamKind::Weight).collect();
    let saved: Vec<Vec<T>> = weights.iter().map(|p| p.tensor.to_vec()).collect();
    let d1: Vec<Vec<f64>> = weights
        .iter()
        .zip(&saved)
        .map(|(p, w)| filter_normalized(w, p.tensor.shape(), rng))
        .collect();
    let d2: Vec<Vec<f64>> = weights
        .iter()
        .zip(&saved)
        .map(|(p, w)| filter_normalized(w, p.tensor.shape(), rng))
        .collect();
    let c = (grid - 1) / 2;
    let coords: Vec<f64> = (0..grid).map(|i| radius * (i as f64 - c as f64) / c as f64).collect();
    let center = evaluate(net, data, batch_size)?.loss;
    let mut loss = vec![vec![0.0; grid]; grid];
    let result = (|| -> Result<()> {
        for (i, &a) in coords.iter().enumerate() {
            for (j, &b) in coords.iter().enumerate() {
                if i == c && j == c {
                    loss[i][j] = center;
                    continue;
                }
                for (((p, w), u), v) in weights.iter().zip(&saved).zip(&d1).zip(&d2) {
                    let moved = w
                        .iter()
                        .zip(u)
                        .zip(v)
                        .map(|((&x, &du), &dv)| T::lit(x.as_f64() + a * du + b * dv))
                        .collect();
                    p.tensor.set_data(moved)?;
                }
                loss[i][j] = evaluate(net, data, batch_size)?.loss;
            }
        }
        Ok(())
    })();
    for (p, w) in weights.iter().zip(saved) {
        p.tensor.set_data(w)?;
    }
    result?;
    let mode = net.quantizers().first().map_or(QuantMode::Quant, |(_, _, q)| q.mode());
    Ok(LandscapeGrid {
        radius,
        coords,
        loss,
        center_loss: center,
        mode,
    })
}
