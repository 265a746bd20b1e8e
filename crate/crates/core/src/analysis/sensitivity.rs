//! Layer sensitivity (Hessian trace) against assigned bit-widths.

use serde::{Deserialize, Serialize};

use super::hessian::network_traces;
use super::stats::spearman;
use crate::error::{invalid, Result};
use crate::model_zoo::{constructed_sensitivity_pair, Dataset, Network, SensitivityPair};
use crate::trainer::{train_fp, TrainConfig};
use crate::Scalar;

/// Rows used for trace estimation.
pub const TRACE_SAMPLES: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSensitivity {
    pub name: String,
    pub block: usize,
    pub trace: f64,
    pub std_err: f64,
    pub n_elements: usize,
    pub trace_per_element: f64,
    pub weight_bit: u32,
    pub activation_bit: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub n_probes: usize,
    pub layers: Vec<LayerSensitivity>,
    /// Rank correlation of weight bits with total trace; `None` if either is constant.
    pub spearman_total: Option<f64>,
    pub spearman_per_element: Option<f64>,
}

/// Hutchinson traces of each weight-quantized layer (computed in f64 on a
/// converted copy) paired with its deployed bits.
pub fn sensitivity_report<T: Scalar>(net: &Network<T>, data: &Dataset<T>, n_probes: usize, seed: u64) -> Result<SensitivityReport> {
    let net64 = net.convert::<f64>()?;
    let data64 = data.convert::<f64>()?;
    let traces = network_traces(&net64, &data64, TRACE_SAMPLES, true, n_probes, seed)?;
    let bits = net.deployed_bits();
    let layers: Vec<LayerSensitivity> = traces
        .groups
        .iter()
        .map(|g| {
            let block: usize = g.name[1..g.name.find('.').unwrap_or(g.name.len())].parse().unwrap_or(0);
            LayerSensitivity {
                name: g.name.clone(),
                block,
                trace: g.trace,
                std_err: g.std_err,
                n_elements: g.n_elements,
                trace_per_element: g.trace_per_element,
                weight_bit: bits[block].0,
                activation_bit: bits[block].1,
            }
        })
        .collect();
    let b: Vec<f64> = layers.iter().map(|l| l.weight_bit as f64).collect();
    let t: Vec<f64> = layers.iter().map(|l| l.trace).collect();
    let te: Vec<f64> = layers.iter().map(|l| l.trace_per_element).collect();
    Ok(SensitivityReport {
        n_probes,
        spearman_total: spearman(&t, &b),
        spearman_per_element: spearman(&te, &b),
        layers,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTraces {
    pub sensitive: f64,
    pub other: f64,
    pub sensitive_per_element: f64,
    pub other_per_element: f64,
}

impl PairTraces {
    pub fn ratio(&self) -> f64 {
        self.sensitive / self.other
    }

    pub fn per_element_ratio(&self) -> f64 {
        self.sensitive_per_element / self.other_per_element
    }
}

/// Full-precision trains the engineered pair and measures the traces of its
/// two quantized layers. Fails if the total-trace ratio is below `min_ratio`.
pub fn verified_sensitivity_pair(
    seed: u64,
    swapped: bool,
    fp: &TrainConfig,
    n_probes: usize,
    min_ratio: f64,
) -> Result<(SensitivityPair<f64>, PairTraces)> {
    let mut pair = constructed_sensitivity_pair::<f64>(seed, swapped)?;
    let calib: Vec<usize> = (0..pair.train.len().min(256)).collect();
    pair.network.calibrate(&pair.train.batch(&calib)?.0)?;
    let epochs = fp.fp_epochs.max(1);
    train_fp(&mut pair.network, &pair.train, None, fp, epochs)?;
    let r = network_traces(&pair.network, &pair.train, TRACE_SAMPLES, true, n_probes, seed)?;
    let get = |i: usize| {
        r.group(&format!("l{i}.weight"))
            .cloned()
            .ok_or_else(|| invalid(format!("no trace for layer {i}")))
    };
    let (s, o) = (get(pair.sensitive)?, get(pair.other)?);
    let traces = PairTraces {
        sensitive: s.trace,
        other: o.trace,
        sensitive_per_element: s.trace_per_element,
        other_per_element: o.trace_per_element,
    };
    if !(traces.ratio() >= min_ratio) {
        return Err(invalid(format!(
            "sensitivity pair (seed {seed}) has trace ratio {:.2}, below {min_ratio}",
            traces.ratio()
        )));
    }
    Ok((pair, traces))
}
