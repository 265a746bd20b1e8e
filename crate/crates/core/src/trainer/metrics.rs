use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::write_atomic;
use crate::model_zoo::{Dataset, Network, Split};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Fp,
    Stage1,
    Transition,
    Stage2,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Fp => "fp",
            Phase::Stage1 => "stage1",
            Phase::Transition => "transition",
            Phase::Stage2 => "stage2",
        }
    }
}

/// One row of the metrics stream: an epoch's training summary or an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub split: Split,
    pub loss: f64,
    pub accuracy: Option<f64>,
    /// Mean squared error for regression sets.
    pub mse: Option<f64>,
    pub penalty: f64,
    pub quantizers: Vec<String>,
    /// Continuous effective bit per quantizer.
    pub bits: Vec<f64>,
    pub alphas: Vec<Option<f64>>,
}

impl MetricsRecord {
    pub fn snapshot<T: Scalar>(
        net: &Network<T>,
        epoch: usize,
        phase: Phase,
        split: Split,
        loss: f64,
        accuracy: Option<f64>,
        penalty: f64,
    ) -> Self {
        let qs = net.quantizers();
        Self {
            epoch,
            phase,
            split,
            loss,
            accuracy,
            mse: None,
            penalty,
            quantizers: qs.iter().map(|(n, _, _)| n.clone()).collect(),
            bits: qs.iter().map(|(_, _, q)| q.bit_value().as_f64()).collect(),
            alphas: qs.iter().map(|(_, _, q)| q.alpha_value().map(|a| a.as_f64())).collect(),
        }
    }

    /// Copies the loss into `mse` for regression sets.
    pub fn metric_kind_from<T: Scalar>(&mut self, data: &Dataset<T>) {
        if data.n_classes().is_none() {
            self.mse = Some(self.loss);
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Header `epoch,phase,split,loss,accuracy,mse,penalty,bit_<q>...,alpha_<q>...`
/// with quantizer columns taken from the first record.
pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let names: &[String] = records.first().map_or(&[], |r| &r.quantizers);
    let mut header: Vec<String> = ["epoch", "phase", "split", "loss", "accuracy", "mse", "penalty"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(names.iter().map(|n| format!("bit_{n}")));
    header.extend(names.iter().map(|n| format!("alpha_{n}")));
    w.write_record(&header)?;
    for r in records {
        let split = match r.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let mut row = vec![
            r.epoch.to_string(),
            r.phase.as_str().to_string(),
            split.to_string(),
            r.loss.to_string(),
            opt(r.accuracy),
            opt(r.mse),
            r.penalty.to_string(),
        ];
        row.extend(r.bits.iter().map(f64::to_string));
        row.extend(r.alphas.iter().map(|a| opt(*a)));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn write_metrics_jsonl(path: impl AsRef<Path>, records: &[MetricsRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
