//! Truncation (learned boundary) against min-max quantizers on weights.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::stats::mean_std;
use crate::constraints::{ResourceKind, ResourceTarget};
use crate::error::{invalid, Result};
use crate::model_zoo::{Dataset, Network, NetworkSpec, QuantizerKind};
use crate::quant::{bit_to_raw, TensorRole};
use crate::trainer::{evaluate, evaluate_fp, train_fp, train_two_stage, TrainConfig};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub avg_bits: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Penalty weight of the average-bit target when bits are learned.
    pub lambda: f64,
    /// Learn per-layer bits under the average-bit penalty. Off by default:
    /// every quantized layer then runs at exactly the target bit, so both
    /// variants are compared at identical budgets.
    pub learn_bits: bool,
    pub train: TrainConfig,
    /// Also train a full-precision reference per seed.
    pub include_fp: bool,
    pub jobs: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            avg_bits: vec![3.0],
            seeds: (0..5).collect(),
            lambda: 1.0,
            learn_bits: false,
            train: TrainConfig::default(),
            include_fp: false,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub variant: String,
    pub target_bits: f64,
    pub seed: u64,
    /// Accuracy for classification, MSE for regression.
    pub metric: f64,
    /// Element-weighted deployed weight bits; 32 for the FP reference.
    pub avg_weight_bits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub variant: String,
    pub target_bits: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
    pub summary: Vec<CompareSummary>,
}

impl CompareTable {
    pub fn mean(&self, variant: &str, target_bits: f64) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.variant == variant && s.target_bits == target_bits)
            .map(|s| s.mean)
    }

    pub fn paired(&self, a: &str, b: &str, target_bits: f64) -> Vec<(u64, f64, f64)> {
        let get = |v: &str, s: u64| {
            self.rows
                .iter()
                .find(|r| r.variant == v && r.seed == s && r.target_bits == target_bits)
                .map(|r| r.metric)
        };
        let mut seeds: Vec<u64> = self.rows.iter().filter(|r| r.target_bits == target_bits).map(|r| r.seed).collect();
        seeds.dedup();
        seeds.into_iter().filter_map(|s| Some((s, get(a, s)?, get(b, s)?))).collect()
    }
}

pub const TRUNCATION: &str = "truncation";
pub const MINMAX: &str = "minmax";
pub const FULL_PRECISION: &str = "fp";

#[derive(Clone, Copy)]
enum Job {
    Quant(QuantizerKind, f64, u64),
    Fp(u64),
}

fn run_job<T: Scalar>(template: &NetworkSpec, train: &Dataset<T>, test: &Dataset<T>, cfg: &CompareConfig, job: Job) -> Result<CompareRow> {
    match job {
        Job::Fp(seed) => {
            let mut net = Network::<T>::build(template, seed)?;
            let tc = TrainConfig {
                seed,
                targets: vec![],
                ..cfg.train.clone()
            };
            let epochs = tc.fp_epochs + tc.stage1_epochs + tc.stage2_epochs;
            let calib: Vec<usize> = (0..train.len().min(256)).collect();
            net.calibrate(&train.batch(&calib)?.0)?;
            train_fp(&mut net, train, None, &tc, epochs)?;
            Ok(CompareRow {
                variant: FULL_PRECISION.into(),
                target_bits: 32.0,
                seed,
                metric: evaluate_fp(&net, test, tc.eval_batch_size)?.metric(),
                avg_weight_bits: 32.0,
            })
        }
        Job::Quant(kind, bits, seed) => {
            let mut spec = template.clone().with_quantizer(kind);
            spec.quantize_activations = false;
            // the open parametrization range (2, 14) excludes its endpoints
            spec.init_bit_raw = bit_to_raw(bits.clamp(2.0 + 1e-9, 14.0 - 1e-9))?;
            let mut net = Network::<T>::build(&spec, seed)?;
            let tc = TrainConfig {
                seed,
                targets: if cfg.learn_bits {
                    vec![ResourceTarget::new(ResourceKind::AvgBitWeight, bits, cfg.lambda)?]
                } else {
                    vec![]
                },
                learn_bits: cfg.learn_bits,
                ..cfg.train.clone()
            };
            train_two_stage(&mut net, train, None, &tc)?;
            Ok(CompareRow {
                variant: match kind {
                    QuantizerKind::Nipq => TRUNCATION,
                    QuantizerKind::MinMax => MINMAX,
                }
                .into(),
                target_bits: bits,
                seed,
                metric: evaluate(&net, test, tc.eval_batch_size)?.metric(),
                avg_weight_bits: net.avg_deployed_bits(TensorRole::Weight).unwrap_or(32.0),
            })
        }
    }
}

/// Trains weight-only quantized copies of `template` with learned
/// truncation and with min-max ranges, per target average bit and seed,
/// and scores each in quantization mode on `test`. Runs fan out over
/// `cfg.jobs` threads; row order is fixed by (bits, seed, variant).
pub fn compare_truncation_minmax<T: Scalar>(
    template: &NetworkSpec,
    train: &Dataset<T>,
    test: &Dataset<T>,
    cfg: &CompareConfig,
) -> Result<CompareTable> {
    if cfg.seeds.is_empty() || cfg.avg_bits.is_empty() {
        return Err(invalid("compare needs at least one seed and one bit target"));
    }
    cfg.train.validate()?;
    if !cfg.learn_bits {
        if let Some(b) = cfg.avg_bits.iter().find(|b| b.fract() != 0.0 || !(2.0..=14.0).contains(*b)) {
            return Err(invalid(format!("fixed-bit comparison needs whole bits in [2, 14], got {b}")));
        }
    }
    let mut jobs = Vec::new();
    for &b in &cfg.avg_bits {
        for &s in &cfg.seeds {
            jobs.push(Job::Quant(QuantizerKind::Nipq, b, s));
            jobs.push(Job::Quant(QuantizerKind::MinMax, b, s));
        }
    }
    if cfg.include_fp {
        jobs.extend(cfg.seeds.iter().map(|&s| Job::Fp(s)));
    }
    let results: Mutex<Vec<Option<Result<CompareRow>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..cfg.jobs.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&job) = jobs.get(i) else { break };
                let r = run_job(template, train, test, cfg, job);
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    let rows: Vec<CompareRow> = results
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.unwrap_or_else(|| Err(invalid("compare job did not run"))))
        .collect::<Result<_>>()?;
    let mut summary = Vec::new();
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in &rows {
        if !keys.iter().any(|(v, b)| *v == r.variant && *b == r.target_bits) {
            keys.push((r.variant.clone(), r.target_bits));
        }
    }
    for (variant, target_bits) in keys {
        let xs: Vec<f64> = rows
            .iter()
            .filter(|r| r.variant == variant && r.target_bits == target_bits)
            .map(|r| r.metric)
            .collect();
        let (mean, std) = mean_std(&xs);
        summary.push(CompareSummary {
            variant,
            target_bits,
            mean,
            std,
            n: xs.len(),
        });
    }
    Ok(CompareTable { rows, summary })
}
