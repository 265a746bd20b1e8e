//! Training: schedules, optimizers, the two-stage pipeline, BN
//! recalibration, checkpoints and metric streams.
//!
//! Stage 1 trains weights, truncation boundaries and bit-widths in noise
//! mode against task loss plus resource penalties. At the transition every
//! bit is frozen at `round(bit)` and quantizers switch to quantization mode.
//! Stage 2 fine-tunes weights and boundaries with straight-through gradients
//! while batch-norm statistics adapt to the real quantizer.

mod checkpoint;
mod metrics;
mod optim;

use serde::{Deserialize, Serialize};

pub use checkpoint::{blob_path, load_checkpoint, read_manifest, save_checkpoint, Manifest, QuantizerEntry, TensorEntry};
pub use metrics::{write_metrics_csv, write_metrics_jsonl, MetricsRecord, Phase};
pub use optim::{cosine_warmup_lr, Optimizer, OptimizerKind, Update, ADAM_BETAS, ADAM_EPS, SGD_MOMENTUM};

use crate::constraints::{avg_bit_penalty, bops_penalty, total_loss, ResourceKind, ResourceTarget};
use crate::error::{invalid, Result};
use crate::model_zoo::{BnMode, Dataset, Forward, Network, ParamKind, Split, Targets};
use crate::quant::{QuantMode, TensorRole};
use crate::rng::RngStream;
use crate::tensor::{no_grad, Tensor};
use crate::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Noise-injection stage 1, then quantization-mode stage 2.
    #[default]
    Nipq,
    /// Quantization mode with straight-through rounding from the first step,
    /// bits fixed at their initial (or pre-frozen) values.
    SteLsq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Full-precision pre-training before quantization-aware training, the
    /// desk-scale stand-in for starting from a pretrained model.
    pub fp_epochs: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Learning rate for `alpha_raw` / `bit_raw`; defaults to `lr`.
    pub quant_lr: Option<f64>,
    /// Never applied to `alpha_raw` / `bit_raw`.
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub eta_min_ratio: f64,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub bn_momentum: f64,
    pub targets: Vec<ResourceTarget>,
    pub pipeline: Pipeline,
    /// With `false`, bit-widths stay at their initial values through stage 1.
    pub learn_bits: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            fp_epochs: 0,
            stage1_epochs: 25,
            stage2_epochs: 3,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            quant_lr: None,
            weight_decay: 0.0,
            warmup_epochs: 0,
            eta_min_ratio: 1e-3,
            batch_size: 64,
            eval_batch_size: 256,
            bn_momentum: 0.1,
            targets: Vec::new(),
            pipeline: Pipeline::Nipq,
            learn_bits: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        if let Some(q) = self.quant_lr {
            if !(q > 0.0) {
                return Err(invalid(format!("quant_lr must be > 0, got {q}")));
            }
        }
        if !(self.eta_min_ratio > 0.0 && self.eta_min_ratio <= 1.0) {
            return Err(invalid(format!("eta_min_ratio must lie in (0, 1], got {}", self.eta_min_ratio)));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(invalid("batch sizes must be >= 1"));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(invalid("weight_decay must be >= 0 and bn_momentum in [0, 1]"));
        }
        if self.warmup_epochs > 0 && self.warmup_epochs >= self.stage1_epochs + self.stage2_epochs {
            return Err(invalid("warmup must be shorter than the quantization-aware run"));
        }
        for t in &self.targets {
            t.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    /// Classification only.
    pub accuracy: Option<f64>,
    pub n: usize,
}

impl EvalMetrics {
    /// Accuracy for classification, mean squared error otherwise.
    pub fn metric(&self) -> f64 {
        self.accuracy.unwrap_or(self.loss)
    }
}

/// Cross-entropy for class targets, mean squared error for values.
pub fn task_loss<T: Scalar>(out: &Tensor<T>, targets: &Targets<T>) -> Result<Tensor<T>> {
    match targets {
        Targets::Classes { labels, .. } => out.softmax_cross_entropy(labels),
        Targets::Values(v) => out.mse(v),
    }
}

/// Evaluates in the quantizers' current modes with running BN statistics
/// and zero noise. Batch results are reduced in batch order.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset<T>, batch_size: usize) -> Result<EvalMetrics> {
    no_grad(|| {
        let mut loss = 0.0;
        let mut correct = 0usize;
        for idx in data.batch_indices(batch_size, None) {
            let (x, y) = data.batch(&idx)?;
            let out = net.forward(&x, &mut Forward::eval())?;
            loss += task_loss(&out, &y)?.item().as_f64() * idx.len() as f64;
            if let Targets::Classes { labels, .. } = &y {
                let c = out.shape()[1];
                let o = out.data();
                for (r, &l) in labels.iter().enumerate() {
                    let row = &o[r * c..(r + 1) * c];
                    let arg = (0..c).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                    correct += usize::from(arg == l);
                }
            }
        }
        let n = data.len().max(1);
        Ok(EvalMetrics {
            loss: loss / n as f64,
            accuracy: data.n_classes().map(|_| correct as f64 / n as f64),
            n: data.len(),
        })
    })
}

/// Evaluates with every quantizer temporarily in quantization mode.
pub fn evaluate_quantized<T: Scalar>(net: &mut Network<T>, data: &Dataset<T>, batch_size: usize) -> Result<EvalMetrics> {
    let modes: Vec<QuantMode> = net.quantizers().iter().map(|(_, _, q)| q.mode()).collect();
    net.set_mode(QuantMode::Quant);
    let out = evaluate(net, data, batch_size);
    for ((_, _, q), m) in net.quantizers_mut().into_iter().zip(modes) {
        q.set_mode(m);
    }
    out
}

/// Sum of the configured penalties on the network's continuous bits.
/// Targets whose tensors are all full precision contribute nothing.
pub fn resource_penalties<T: Scalar>(net: &Network<T>, targets: &[ResourceTarget]) -> Result<Vec<Tensor<T>>> {
    let mut out = Vec::new();
    for t in targets {
        let p = match t.kind {
            ResourceKind::AvgBitWeight | ResourceKind::AvgBitActivation => {
                let role = if t.kind == ResourceKind::AvgBitWeight {
                    TensorRole::Weight
                } else {
                    TensorRole::Activation
                };
                let (bits, elems) = net.bit_terms(role);
                if bits.is_empty() {
                    continue;
                }
                avg_bit_penalty(&bits, &elems, t)?
            }
            ResourceKind::Bops => bops_penalty(&net.bops_terms(), t)?,
        };
        out.push(p);
    }
    Ok(out)
}

/// Re-estimates BN running statistics as a plain average over `n_batches`
/// forward passes in the current quantizer modes. Weights are not touched.
pub fn bn_recalibrate<T: Scalar>(net: &Network<T>, data: &Dataset<T>, n_batches: usize, batch_size: usize, seed: u64) -> Result<()> {
    if !net.has_batch_norm() || n_batches == 0 {
        return Ok(());
    }
    for b in &net.blocks {
        if let Some(bn) = &b.bn {
            bn.running_mean.update_data(|d| d.fill(T::zero()));
            bn.running_var.update_data(|d| d.fill(T::zero()));
        }
    }
    let mut rng = RngStream::new(seed, 0xBC_0001);
    no_grad(|| {
        let batches = data.batch_indices(batch_size, Some(&mut rng));
        for (k, idx) in batches.iter().cycle().take(n_batches).enumerate() {
            let (x, _) = data.batch(idx)?;
            let mut f = Forward::eval().with_bn(BnMode::Update {
                momentum: 1.0 / (k + 1) as f64,
            });
            net.forward(&x, &mut f)?;
        }
        Ok(())
    })
}

/// Everything a run reports.
#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    /// Full-precision evaluation after pre-training (when `fp_epochs > 0`).
    pub fp_eval: Option<EvalMetrics>,
    /// Quantization-mode evaluation right after the bits froze.
    pub transition_eval: Option<EvalMetrics>,
    pub final_eval: Option<EvalMetrics>,
    pub frozen_bits: Vec<u32>,
}

/// Decay applied to a parameter kind; quantizer parameters never decay.
pub fn weight_decay_for(kind: ParamKind, weight_decay: f64) -> f64 {
    if kind.is_quantizer() {
        0.0
    } else {
        weight_decay
    }
}

/// Which parameters a phase updates.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Trainable {
    WeightsOnly,
    All,
    AllButBits,
}

struct Runner<'a, T: Scalar> {
    cfg: &'a TrainConfig,
    train: &'a Dataset<T>,
    eval: Option<&'a Dataset<T>>,
    shuffle: RngStream,
    noise: RngStream,
    records: Vec<MetricsRecord>,
}

impl<T: Scalar> Runner<'_, T> {
    fn steps_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.cfg.batch_size)
    }

    /// Runs `epochs` epochs with one cosine schedule spanning `total_epochs`,
    /// starting at epoch offset `start`.
    #[allow(clippy::too_many_arguments)]
    fn run_epochs(
        &mut self,
        net: &mut Network<T>,
        opt: &mut Optimizer<T>,
        phase: Phase,
        trainable: Trainable,
        penalized: bool,
        start: usize,
        epochs: usize,
        total_epochs: usize,
        warmup_epochs: usize,
    ) -> Result<()> {
        let spe = self.steps_per_epoch();
        let total = total_epochs * spe;
        let warmup = warmup_epochs * spe;
        let params: Vec<_> = net
            .named_params()
            .into_iter()
            .filter(|p| {
                !matches!(
                    (p.kind, trainable),
                    (ParamKind::BnRunning, _)
                        | (ParamKind::AlphaRaw | ParamKind::BitRaw, Trainable::WeightsOnly)
                        | (ParamKind::BitRaw, Trainable::AllButBits)
                )
            })
            .collect();
        let quant_lr_scale = self.cfg.quant_lr.map_or(1.0, |q| q / self.cfg.lr);
        let bn = BnMode::Update {
            momentum: self.cfg.bn_momentum,
        };
        for epoch in start..start + epochs {
            let mut sum_loss = 0.0;
            let mut sum_pen = 0.0;
            let batches = self.train.batch_indices(self.cfg.batch_size, Some(&mut self.shuffle));
            for (b, idx) in batches.iter().enumerate() {
                let step = epoch * spe + b;
                let lr = cosine_warmup_lr(step, total, warmup, self.cfg.lr, self.cfg.eta_min_ratio)?;
                let (x, y) = self.train.batch(idx)?;
                for p in &params {
                    p.tensor.zero_grad();
                }
                let mut f = Forward {
                    bn,
                    rng: Some(&mut self.noise),
                    bypass_quant: trainable == Trainable::WeightsOnly,
                };
                let out = net.forward(&x, &mut f)?;
                let task = task_loss(&out, &y)?;
                let pens = if penalized {
                    resource_penalties(net, &self.cfg.targets)?
                } else {
                    Vec::new()
                };
                let loss = total_loss(&task, &pens)?;
                loss.backward()?;
                sum_loss += task.item().as_f64();
                sum_pen += pens.iter().map(|p| p.item().as_f64()).sum::<f64>();
                let updates: Vec<Update<'_, T>> = params
                    .iter()
                    .map(|p| {
                        let q = p.kind.is_quantizer();
                        Update {
                            tensor: &p.tensor,
                            lr: if q { lr * quant_lr_scale } else { lr },
                            weight_decay: weight_decay_for(p.kind, self.cfg.weight_decay),
                        }
                    })
                    .collect();
                opt.step(&updates);
            }
            let n = batches.len().max(1) as f64;
            let mut rec = MetricsRecord::snapshot(net, epoch, phase, Split::Train, sum_loss / n, None, sum_pen / n);
            rec.metric_kind_from(self.train);
            self.records.push(rec);
            if let Some(ev) = self.eval {
                let m = if phase == Phase::Fp {
                    evaluate_fp(net, ev, self.cfg.eval_batch_size)?
                } else {
                    evaluate_quantized(net, ev, self.cfg.eval_batch_size)?
                };
                self.push_eval(net, epoch, phase, m, ev);
            }
        }
        Ok(())
    }

    fn push_eval(&mut self, net: &Network<T>, epoch: usize, phase: Phase, m: EvalMetrics, ev: &Dataset<T>) {
        let mut rec = MetricsRecord::snapshot(net, epoch, phase, ev.split, m.loss, m.accuracy, 0.0);
        rec.metric_kind_from(ev);
        self.records.push(rec);
    }
}

/// Full-precision evaluation (quantizers bypassed).
pub fn evaluate_fp<T: Scalar>(net: &Network<T>, data: &Dataset<T>, batch_size: usize) -> Result<EvalMetrics> {
    // Same reduction as `evaluate`, on a copy with quantizers stripped.
    let mut fp = net.clone();
    for b in &mut fp.blocks {
        b.layer.w_quant = None;
        b.layer.a_quant = None;
    }
    evaluate(&fp, data, batch_size)
}

/// Resets every boundary from the current weights and a calibration batch:
/// `max|w|` for weights, three standard deviations of the input for activations.
pub fn init_boundaries<T: Scalar>(net: &Network<T>, calib: &Tensor<T>) -> Result<()> {
    for b in &net.blocks {
        if let Some(q) = b.layer.w_quant.as_ref().and_then(|q| q.as_nipq()) {
            let m = b.layer.weight.data().iter().fold(T::zero(), |m, v| m.max(v.abs()));
            q.set_alpha(m.max(T::lit(1e-3)))?;
        }
    }
    net.calibrate(calib)
}

/// Runs the configured pipeline. `eval` (typically the test split) is scored
/// after every epoch, in quantization mode during quantization-aware epochs,
/// and once more at the stage transition; it defaults to `train`.
pub fn train_two_stage<T: Scalar>(
    net: &mut Network<T>,
    train: &Dataset<T>,
    eval: Option<&Dataset<T>>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(invalid("empty training set"));
    }
    let eval_set = eval.unwrap_or(train);
    let mut runner = Runner {
        cfg,
        train,
        eval: Some(eval_set),
        shuffle: RngStream::new(cfg.seed, 0x5_4FF1E),
        noise: RngStream::new(cfg.seed, 0x5_0015E),
        records: Vec::new(),
    };
    let mut outcome = TrainOutcome::default();
    let calib_idx: Vec<usize> = (0..train.len().min(256)).collect();
    let (calib, _) = train.batch(&calib_idx)?;
    net.calibrate(&calib)?;

    if cfg.fp_epochs > 0 {
        let mut opt = Optimizer::new(cfg.optimizer);
        runner.run_epochs(
            net,
            &mut opt,
            Phase::Fp,
            Trainable::WeightsOnly,
            false,
            0,
            cfg.fp_epochs,
            cfg.fp_epochs,
            0,
        )?;
        outcome.fp_eval = Some(evaluate_fp(net, eval_set, cfg.eval_batch_size)?);
        init_boundaries(net, &calib)?;
    }

    let qat_epochs = cfg.stage1_epochs + cfg.stage2_epochs;
    let mut opt = Optimizer::new(cfg.optimizer);
    match cfg.pipeline {
        Pipeline::Nipq => {
            net.set_mode(QuantMode::Noise);
            if cfg.stage1_epochs > 0 {
                let trainable = if cfg.learn_bits { Trainable::All } else { Trainable::AllButBits };
                runner.run_epochs(
                    net,
                    &mut opt,
                    Phase::Stage1,
                    trainable,
                    true,
                    0,
                    cfg.stage1_epochs,
                    qat_epochs,
                    cfg.warmup_epochs,
                )?;
            }
        }
        Pipeline::SteLsq => {
            net.freeze_bits();
            net.set_mode(QuantMode::Quant);
            if cfg.stage1_epochs > 0 {
                runner.run_epochs(
                    net,
                    &mut opt,
                    Phase::Stage1,
                    Trainable::AllButBits,
                    false,
                    0,
                    cfg.stage1_epochs,
                    qat_epochs,
                    cfg.warmup_epochs,
                )?;
            }
        }
    }

    outcome.frozen_bits = net.freeze_bits();
    net.set_mode(QuantMode::Quant);
    let transition = evaluate(net, eval_set, cfg.eval_batch_size)?;
    runner.push_eval(net, cfg.stage1_epochs, Phase::Transition, transition, eval_set);
    outcome.transition_eval = Some(transition);

    if cfg.stage2_epochs > 0 {
        runner.run_epochs(
            net,
            &mut opt,
            Phase::Stage2,
            Trainable::AllButBits,
            false,
            cfg.stage1_epochs,
            cfg.stage2_epochs,
            qat_epochs,
            cfg.warmup_epochs,
        )?;
    }
    outcome.final_eval = Some(evaluate(net, eval_set, cfg.eval_batch_size)?);
    outcome.records = runner.records;
    Ok(outcome)
}

/// Trains the network in full precision only (quantizers bypassed).
pub fn train_fp<T: Scalar>(
    net: &mut Network<T>,
    train: &Dataset<T>,
    eval: Option<&Dataset<T>>,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<EvalMetrics> {
    cfg.validate()?;
    let eval_set = eval.unwrap_or(train);
    let mut runner = Runner {
        cfg,
        train,
        eval: None,
        shuffle: RngStream::new(cfg.seed, 0x5_4FF1E),
        noise: RngStream::new(cfg.seed, 0x5_0015E),
        records: Vec::new(),
    };
    let mut opt = Optimizer::new(cfg.optimizer);
    if epochs > 0 {
        runner.run_epochs(net, &mut opt, Phase::Fp, Trainable::WeightsOnly, false, 0, epochs, epochs, 0)?;
    }
    evaluate_fp(net, eval_set, cfg.eval_batch_size)
}
