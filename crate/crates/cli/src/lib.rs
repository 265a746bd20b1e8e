//! `nipq` command-line front end: train, evaluate, analyse and export
//! quantized networks described by a JSON run config.

pub mod config;
pub mod export;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use nipq::analysis::{check_factors, compare_truncation_minmax, landscape_slice, sensitivity_report, sweep_variants, CompareConfig};
use nipq::model_zoo::{Network, NetworkSpec};
use nipq::quant::TensorRole;
use nipq::trainer::{evaluate, load_checkpoint, read_manifest, save_checkpoint, train_two_stage, EvalMetrics, Manifest};
use nipq::RngStream;

pub use config::RunConfig;
use report::{to_value, write_json, write_rows, Provenance};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn rt(e: nipq::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "nipq", version, about = "Noise-injection quantization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Checkpoint manifest written by `train`.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory; defaults to `<out_dir>/<run id>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parallel runs for `compare`.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Comma-separated boundary scale factors for `sweep`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub factors: Option<Vec<f64>>,
    /// Hutchinson probes for `hessian`.
    #[arg(long, global = true)]
    pub probes: Option<usize>,
    /// Comma-separated bit targets for `compare`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub bits: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Two-stage training; writes metrics, a checkpoint and a summary.
    Train,
    /// Scores a checkpoint on the test split.
    Eval,
    /// Scales truncation boundaries and re-evaluates.
    Sweep,
    /// Loss over a 2-D slice of weight space.
    Landscape,
    /// Per-layer Hessian traces against assigned bits.
    Hessian,
    /// Learned truncation against min-max ranges.
    Compare,
    /// Integer codes plus grid metadata.
    Export,
}

struct Ctx {
    cfg: RunConfig,
    prov: Provenance,
    out: PathBuf,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(s) = cli.seed {
            cfg.train.seed = s;
        }
        let prov = Provenance::of(&cfg);
        let out = cli.out.clone().unwrap_or_else(|| cfg.out_dir.join(&prov.run_id));
        Ok(Self { cfg, prov, out })
    }

    fn checkpoint(&self, cli: &Cli) -> Result<(Network<f32>, Manifest), CliError> {
        let path = cli
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::Config("--checkpoint is required".into()))?;
        load_matching(&self.cfg.network, path)
    }
}

/// Loads a checkpoint after checking it was written for `spec`.
pub fn load_matching(spec: &NetworkSpec, path: &Path) -> Result<(Network<f32>, Manifest), CliError> {
    let m = read_manifest(path).map_err(|e| CliError::Config(format!("--checkpoint {}: {e}", path.display())))?;
    if &m.spec != spec {
        let fresh = Network::<f32>::build(spec, 0).map_err(|e| CliError::Config(format!("network: {e}")))?;
        let params = fresh.named_params();
        let mut i = 0;
        loop {
            match (params.get(i), m.tensors.get(i)) {
                (Some(p), Some(t)) if p.name == t.name && p.tensor.shape() == t.shape.as_slice() => i += 1,
                (Some(p), Some(t)) => {
                    return Err(CliError::Config(format!(
                        "checkpoint does not match the config network: first diverging tensor {} {:?} (config has {} {:?})",
                        t.name,
                        t.shape,
                        p.name,
                        p.tensor.shape()
                    )))
                }
                (Some(p), None) => {
                    return Err(CliError::Config(format!(
                        "checkpoint does not match the config network: first diverging tensor {} is missing from the checkpoint",
                        p.name
                    )))
                }
                (None, Some(t)) => {
                    return Err(CliError::Config(format!(
                        "checkpoint does not match the config network: first diverging tensor {} is not in the config network",
                        t.name
                    )))
                }
                (None, None) => {
                    return Err(CliError::Config(
                        "checkpoint does not match the config network: tensors agree but layer settings differ".into(),
                    ))
                }
            }
        }
    }
    load_checkpoint::<f32>(path).map_err(|e| CliError::Config(format!("--checkpoint {}: {e}", path.display())))
}

fn eval_json(m: &EvalMetrics) -> Value {
    json!({ "loss": m.loss, "accuracy": m.accuracy, "metric": m.metric(), "n": m.n })
}

/// Per-layer bits and boundaries, average bits and BOPs of a network.
pub fn network_summary(net: &Network<f32>) -> Value {
    let layers: Vec<Value> = net
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let l = &b.layer;
            let bit = |q: &Option<nipq::quant::Quantizer<f32>>| q.as_ref().map(|q| q.quant_bit());
            let alpha = |q: &Option<nipq::quant::Quantizer<f32>>| q.as_ref().and_then(|q| q.alpha_value());
            json!({
                "layer": format!("l{i}"),
                "weight_bit": bit(&l.w_quant),
                "weight_alpha": alpha(&l.w_quant),
                "activation_bit": bit(&l.a_quant),
                "activation_alpha": alpha(&l.a_quant),
            })
        })
        .collect();
    json!({
        "layers": layers,
        "avg_weight_bits": net.avg_deployed_bits(TensorRole::Weight),
        "avg_activation_bits": net.avg_deployed_bits(TensorRole::Activation),
        "total_bops": net.total_bops(),
    })
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Ctx::new(cli)?;
    match cli.command {
        Command::Train => train(&ctx),
        Command::Eval => eval(cli, &ctx),
        Command::Sweep => sweep(cli, &ctx),
        Command::Landscape => landscape(cli, &ctx),
        Command::Hessian => hessian(cli, &ctx),
        Command::Compare => compare(cli, &ctx),
        Command::Export => export_cmd(cli, &ctx),
    }
}

fn train(ctx: &Ctx) -> Result<(), CliError> {
    let (tr, te) = ctx.cfg.load_data()?;
    let mut net = Network::<f32>::build(&ctx.cfg.network, ctx.cfg.seed()).map_err(rt)?;
    let outcome = train_two_stage(&mut net, &tr, Some(&te), &ctx.cfg.train).map_err(rt)?;
    let rows = outcome.records.iter().map(to_value).collect::<Result<Vec<_>, _>>()?;
    write_rows(&ctx.out, "metrics", &ctx.prov, &rows)?;
    let meta = json!({
        "run_id": ctx.prov.run_id,
        "config_hash": ctx.prov.config_hash,
        "seed": ctx.prov.seed,
        "config": to_value(&ctx.cfg)?,
    });
    save_checkpoint(&net, ctx.out.join("checkpoint.json"), meta).map_err(rt)?;
    let mut summary = network_summary(&net);
    let fin = outcome.final_eval.as_ref().map(eval_json);
    summary["final"] = fin.clone().unwrap_or(Value::Null);
    summary["final_metric"] = fin.map_or(Value::Null, |f| f["metric"].clone());
    summary["transition"] = outcome.transition_eval.as_ref().map_or(Value::Null, eval_json);
    summary["fp"] = outcome.fp_eval.as_ref().map_or(Value::Null, eval_json);
    summary["frozen_bits"] = json!(outcome.frozen_bits);
    summary["checkpoint"] = json!("checkpoint.json");
    write_json(&ctx.out.join("summary.json"), &ctx.prov, summary)?;
    println!("{}", ctx.out.display());
    Ok(())
}

fn eval(cli: &Cli, ctx: &Ctx) -> Result<(), CliError> {
    let (net, m) = ctx.checkpoint(cli)?;
    let (_, te) = ctx.cfg.load_data()?;
    let metrics = evaluate(&net, &te, ctx.cfg.train.eval_batch_size).map_err(rt)?;
    let mut v = eval_json(&metrics);
    v["split"] = json!("test");
    v["checkpoint_run_id"] = m.meta.get("run_id").cloned().unwrap_or(Value::Null);
    write_json(&ctx.out.join("eval.json"), &ctx.prov, &v)?;
    println!("{}", serde_json::to_string(&v).map_err(|e| CliError::Runtime(e.to_string()))?);
    Ok(())
}

fn sweep(cli: &Cli, ctx: &Ctx) -> Result<(), CliError> {
    let factors = cli.factors.clone().unwrap_or_else(|| ctx.cfg.analysis.sweep_factors.clone());
    check_factors(&factors).map_err(|e| CliError::Config(format!("--factors: {e}")))?;
    let (net, _) = ctx.checkpoint(cli)?;
    let (_, te) = ctx.cfg.load_data()?;
    let mut variants = vec![(ctx.prov.run_id.clone(), net)];
    let res = sweep_variants(
        &mut variants,
        &te,
        &factors,
        ctx.cfg.analysis.sweep_target,
        ctx.cfg.train.eval_batch_size,
    )
    .map_err(rt)?;
    let base_i = factors.iter().position(|&f| f == 1.0).unwrap_or(0);
    let base = res.metrics[0][base_i];
    let rows: Vec<Value> = factors
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let m = res.metrics[0][i];
            let drop = if res.higher_is_better { base - m } else { m - base };
            json!({ "factor": f, "target": ctx.cfg.analysis.sweep_target, "loss": res.losses[0][i], "metric": m, "drop": drop })
        })
        .collect();
    write_rows(&ctx.out, "sweep", &ctx.prov, &rows)?;
    let lo = factors.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = factors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let auc = if factors.len() >= 2 {
        Some(res.drop_auc(0, lo, hi).map_err(rt)?)
    } else {
        None
    };
    write_json(
        &ctx.out.join("sweep_summary.json"),
        &ctx.prov,
        json!({ "result": res, "drop_auc": auc }),
    )
}

fn landscape(cli: &Cli, ctx: &Ctx) -> Result<(), CliError> {
    let a = &ctx.cfg.analysis;
    if a.landscape_grid < 3 || a.landscape_grid.is_multiple_of(2) {
        return Err(CliError::Config(format!(
            "analysis.landscape_grid: must be odd and >= 3, got {}",
            a.landscape_grid
        )));
    }
    if !(a.landscape_radius > 0.0 && a.landscape_radius.is_finite()) {
        return Err(CliError::Config(format!(
            "analysis.landscape_radius: must be positive, got {}",
            a.landscape_radius
        )));
    }
    let (net, _) = ctx.checkpoint(cli)?;
    let (_, te) = ctx.cfg.load_data()?;
    let mut rng = RngStream::new(ctx.prov.seed, 0x1A4D);
    let g = landscape_slice(
        &net,
        &te,
        a.landscape_grid,
        a.landscape_radius,
        &mut rng,
        ctx.cfg.train.eval_batch_size,
    )
    .map_err(rt)?;
    let text = g.to_text(to_value(&ctx.prov)?).map_err(rt)?;
    nipq::io::write_atomic(ctx.out.join("landscape.txt"), text.as_bytes()).map_err(rt)?;
    let mut rows = Vec::new();
    for (i, x) in g.coords.iter().enumerate() {
        for (j, y) in g.coords.iter().enumerate() {
            rows.push(json!({ "i": i, "j": j, "x": x, "y": y, "loss": g.loss[i][j] }));
        }
    }
    write_rows(&ctx.out, "landscape", &ctx.prov, &rows)
}

fn hessian(cli: &Cli, ctx: &Ctx) -> Result<(), CliError> {
    let probes = cli.probes.unwrap_or(ctx.cfg.analysis.hessian_probes);
    if probes < 2 {
        return Err(CliError::Config(format!(
            "--probes: need at least 2 probes for a standard error, got {probes}"
        )));
    }
    let (net, _) = ctx.checkpoint(cli)?;
    let (tr, _) = ctx.cfg.load_data()?;
    let rep = sensitivity_report(&net, &tr, probes, ctx.prov.seed).map_err(rt)?;
    let rows = rep.layers.iter().map(to_value).collect::<Result<Vec<_>, _>>()?;
    write_rows(&ctx.out, "hessian", &ctx.prov, &rows)?;
    write_json(&ctx.out.join("hessian_summary.json"), &ctx.prov, &rep)
}

fn compare(cli: &Cli, ctx: &Ctx) -> Result<(), CliError> {
    let c = &ctx.cfg.analysis.compare;
    let cc = CompareConfig {
        avg_bits: cli.bits.clone().unwrap_or_else(|| c.bits.clone()),
        seeds: c.seeds.clone(),
        lambda: c.lambda,
        learn_bits: c.learn_bits,
        train: ctx.cfg.train.clone(),
        include_fp: c.include_fp,
        jobs: cli.jobs.unwrap_or(1).max(1),
    };
    if !cc.learn_bits {
        if let Some(b) = cc.avg_bits.iter().find(|b| b.fract() != 0.0 || !(2.0..=14.0).contains(*b)) {
            return Err(CliError::Config(format!(
                "--bits: fixed-bit comparison needs whole bits in [2, 14], got {b}"
            )));
        }
    }
    if cc.seeds.is_empty() || cc.avg_bits.is_empty() {
        return Err(CliError::Config(
            "analysis.compare: needs at least one seed and one bit target".into(),
        ));
    }
    let (tr, te) = ctx.cfg.load_data()?;
    let table = compare_truncation_minmax(&ctx.cfg.network, &tr, &te, &cc).map_err(rt)?;
    let rows = table.rows.iter().map(to_value).collect::<Result<Vec<_>, _>>()?;
    write_rows(&ctx.out, "compare", &ctx.prov, &rows)?;
    let summary = table.summary.iter().map(to_value).collect::<Result<Vec<_>, _>>()?;
    write_rows(&ctx.out, "compare_summary", &ctx.prov, &summary)
}

fn export_cmd(cli: &Cli, ctx: &Ctx) -> Result<(), CliError> {
    let (net, _) = ctx.checkpoint(cli)?;
    export::export_network(&net, &ctx.out.join("export.json"), &ctx.prov)?;
    println!("{}", ctx.out.join("export.json").display());
    Ok(())
}
