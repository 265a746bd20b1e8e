use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::{json, Value};

use nipq::model_zoo::{Network, NetworkSpec};
use nipq::trainer::{evaluate, load_checkpoint};
use nipq_cli::export::{apply_export, load_export, quant_mode_weights};
use nipq_cli::{load_matching, CliError, RunConfig};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn blobs_config() -> Value {
    let text = std::fs::read_to_string(repo().join("configs/blobs_mlp.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn nipq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nipq")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Trains the blobs config into `<dir>/<sub>`.
fn train(dir: &Path, cfg: &Path, sub: &str) -> PathBuf {
    let out = dir.join(sub);
    let o = nipq(&["train", "--config", s(cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn blobs_training_is_fast_writes_artifacts_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &blobs_config());
    let t = Instant::now();
    let a = train(dir.path(), &cfg, "a");
    assert!(t.elapsed().as_secs_f64() < 60.0);
    for f in ["metrics.csv", "metrics.jsonl", "checkpoint.json", "checkpoint.bin", "summary.json"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    for key in [
        "run_id",
        "config_hash",
        "seed",
        "final_metric",
        "layers",
        "total_bops",
        "avg_weight_bits",
        "avg_activation_bits",
    ] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
    assert!(summary["final_metric"].as_f64().unwrap() > 0.5);
    let csv = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("run_id,config_hash,seed,"));
    let b = train(dir.path(), &cfg, "b");
    assert_eq!(
        std::fs::read(a.join("summary.json")).unwrap(),
        std::fs::read(b.join("summary.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.join("checkpoint.bin")).unwrap(),
        std::fs::read(b.join("checkpoint.bin")).unwrap()
    );
}

#[test]
fn seed_flag_changes_run_id() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = blobs_config();
    v["train"]["stage1_epochs"] = json!(1);
    v["train"]["fp_epochs"] = json!(0);
    let cfg = write_config(dir.path(), &v);
    let out = dir.path().join("o");
    let o = nipq(&["train", "--config", s(&cfg), "--out", s(&out), "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], json!(9));
    assert!(summary["run_id"].as_str().unwrap().ends_with("-s9"));
}

#[test]
fn missing_dataset_file_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = blobs_config();
    v["dataset"] = json!({
        "kind": "idx",
        "train_images": "nope-images",
        "train_labels": "nope-labels",
        "test_images": "nope-images",
        "test_labels": "nope-labels"
    });
    let cfg = write_config(dir.path(), &v);
    let o = nipq(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset.train_images"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = blobs_config();
    v["train"]["learning_rate"] = json!(0.1);
    let cfg = write_config(dir.path(), &v);
    let o = nipq(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("train") && err.contains("learning_rate"), "{err}");
}

#[test]
fn malformed_json_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\n  \"name\": \"x\",\n  \"network\": [\n").unwrap();
    let o = nipq(&["eval", "--config", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn config_hash_tracks_content() {
    let v = blobs_config();
    let a = RunConfig::parse(&v.to_string(), Path::new(".")).unwrap();
    let b = RunConfig::parse(&serde_json::to_string_pretty(&v).unwrap(), Path::new(".")).unwrap();
    assert_eq!(a.hash(), b.hash());
    let mut w = v.clone();
    w["train"]["lr"] = json!(0.004);
    let c = RunConfig::parse(&w.to_string(), Path::new(".")).unwrap();
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn analysis_commands_validate_and_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &blobs_config());
    let out = train(dir.path(), &cfg, "run");
    let ck = out.join("checkpoint.json");
    let base = ["--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&out)];
    let run = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend(base);
        args.extend(extra);
        nipq(&args)
    };

    let o = run("sweep", &["--factors", "0.8,0.9,1.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("1.0"));
    let o = run("hessian", &["--probes", "1"]);
    assert_eq!(o.status.code(), Some(2));

    for (cmd, extra, files) in [
        ("eval", vec![], vec!["eval.json"]),
        (
            "sweep",
            vec!["--factors", "0.9,1.0,1.1"],
            vec!["sweep.csv", "sweep.jsonl", "sweep_summary.json"],
        ),
        ("landscape", vec![], vec!["landscape.txt", "landscape.csv", "landscape.jsonl"]),
        (
            "hessian",
            vec!["--probes", "8"],
            vec!["hessian.csv", "hessian.jsonl", "hessian_summary.json"],
        ),
    ] {
        let o = run(cmd, &extra);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        for f in files {
            let text = std::fs::read_to_string(out.join(f)).unwrap();
            assert!(text.contains("config_hash"), "{f} lacks provenance");
        }
    }
    let sweep = std::fs::read_to_string(out.join("sweep.jsonl")).unwrap();
    let rows: Vec<Value> = sweep.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1]["drop"], json!(0.0));
}

#[test]
fn missing_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &blobs_config());
    let o = nipq(&["eval", "--config", s(&cfg), "--checkpoint", s(&dir.path().join("none.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--checkpoint"));
}

#[test]
fn checkpoint_for_another_network_names_first_diverging_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = blobs_config();
    v["train"]["fp_epochs"] = json!(0);
    v["train"]["stage1_epochs"] = json!(1);
    v["train"]["stage2_epochs"] = json!(0);
    let cfg = write_config(dir.path(), &v);
    let out = train(dir.path(), &cfg, "run");
    v["network"]["layers"][1]["out"] = json!(24);
    let other = dir.path().join("other.json");
    std::fs::write(&other, v.to_string()).unwrap();
    let o = nipq(&["eval", "--config", s(&other), "--checkpoint", s(&out.join("checkpoint.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("l1.weight"), "{}", stderr(&o));

    let spec: NetworkSpec = serde_json::from_value(v["network"].clone()).unwrap();
    match load_matching(&spec, &out.join("checkpoint.json")) {
        Err(CliError::Config(msg)) => assert!(msg.contains("first diverging tensor l1.weight"), "{msg}"),
        other => panic!("expected a config error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn export_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), &blobs_config());
    let out = train(dir.path(), &cfg_path, "run");
    let ck = out.join("checkpoint.json");
    let o = nipq(&["export", "--config", s(&cfg_path), "--checkpoint", s(&ck), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let (net, _) = load_checkpoint::<f32>(&ck).unwrap();
    let (manifest, tensors) = load_export(&out.join("export.json")).unwrap();
    let expected = quant_mode_weights(&net).unwrap();
    for (name, w) in &expected {
        let got = &tensors.iter().find(|(n, _)| n == name).unwrap().1;
        let same = got
            .iter()
            .zip(w)
            .all(|(a, b)| a.to_bits() == b.to_bits() || (*a == 0.0 && *b == 0.0));
        assert!(same, "{name} differs after round trip");
    }
    for t in &manifest.tensors {
        if let Some(g) = &t.grid {
            assert!(g.bit <= 8 || t.bytes == 2 * t.shape.iter().product::<usize>());
        }
    }

    let cfg = RunConfig::load(&cfg_path).unwrap();
    let (_, te) = cfg.load_data().unwrap();
    let reloaded: Network<f32> = load_checkpoint::<f32>(&ck).unwrap().0;
    apply_export(&reloaded, &tensors).unwrap();
    let a = evaluate(&net, &te, 256).unwrap();
    let b = evaluate(&reloaded, &te, 256).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert_eq!(a.accuracy, b.accuracy);
    // Exported weights are on-grid: quantizing them again changes nothing.
    let again = quant_mode_weights(&reloaded).unwrap();
    for ((_, x), (_, y)) in again.iter().zip(&expected) {
        assert!(x.iter().zip(y).all(|(a, b)| a == b));
    }
}

#[test]
fn compare_writes_rows_per_seed_and_variant() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = blobs_config();
    v["train"]["fp_epochs"] = json!(1);
    v["train"]["stage1_epochs"] = json!(2);
    v["train"]["stage2_epochs"] = json!(1);
    let cfg = write_config(dir.path(), &v);
    let out = dir.path().join("cmp");
    let o = nipq(&["compare", "--config", s(&cfg), "--out", s(&out), "--bits", "3,4", "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = std::fs::read_to_string(out.join("compare.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 2 * 2 * 2);
    let o = nipq(&["compare", "--config", s(&cfg), "--out", s(&out), "--bits", "3.5"]);
    assert_eq!(o.status.code(), Some(2));
}
