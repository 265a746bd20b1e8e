//! Run configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nipq::analysis::SweepTarget;
use nipq::model_zoo::{load_idx_dataset, make_gaussian_blobs_with, make_regression_wave, Dataset, NetworkSpec};
use nipq::trainer::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Experiment name; prefixes run ids.
    pub name: String,
    pub network: NetworkSpec,
    pub dataset: DatasetSpec,
    /// Optimizer, epochs, resource targets and seed. Every field has a default.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    /// Where artifacts go unless `--out` is given. Relative paths resolve
    /// against the working directory.
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_separation() -> f64 {
    nipq::model_zoo::DEFAULT_BLOB_SEPARATION
}

fn one() -> f64 {
    1.0
}

fn three_quarters() -> f64 {
    0.75
}

/// Data source. Idx paths are relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        n: usize,
        classes: usize,
        dim: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "one")]
        noise: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "three_quarters")]
        train_fraction: f64,
    },
    Wave {
        n: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "three_quarters")]
        train_fraction: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Defaults to the largest label plus one.
        #[serde(default)]
        classes: Option<usize>,
    },
}

/// Settings for the analysis commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Boundary scale factors for `sweep`; must contain 1.0.
    pub sweep_factors: Vec<f64>,
    pub sweep_target: SweepTarget,
    /// Odd number of points per landscape axis.
    pub landscape_grid: usize,
    /// Landscape extent in units of the filter-normalized direction.
    pub landscape_radius: f64,
    pub hessian_probes: usize,
    pub compare: CompareSection,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            sweep_factors: (0..=8).map(|i| (80 + 5 * i) as f64 / 100.0).collect(),
            sweep_target: SweepTarget::Both,
            landscape_grid: 11,
            landscape_radius: 1.0,
            hessian_probes: 200,
            compare: CompareSection::default(),
        }
    }
}

/// Truncation against min-max; training settings come from `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub bits: Vec<f64>,
    pub seeds: Vec<u64>,
    pub lambda: f64,
    pub learn_bits: bool,
    pub include_fp: bool,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            bits: vec![3.0],
            seeds: (0..5).collect(),
            lambda: 1.0,
            learn_bits: false,
            include_fp: false,
        }
    }
}

impl RunConfig {
    /// Parses and validates; errors name the offending key and position.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            CliError::Config(format!("{path}: {inner}"))
        })?;
        if let DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = &mut cfg.dataset
        {
            for (key, p) in [
                ("train_images", train_images),
                ("train_labels", train_labels),
                ("test_images", test_images),
                ("test_labels", test_labels),
            ] {
                if p.is_relative() {
                    *p = base_dir.join(&*p);
                }
                if !p.is_file() {
                    return Err(CliError::Config(format!("dataset.{key}: no such file {}", p.display())));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg_err = |key: &str, e: nipq::Error| CliError::Config(format!("{key}: {e}"));
        if self.name.is_empty() {
            return Err(CliError::Config("name: must not be empty".into()));
        }
        self.network.output_shape().map_err(|e| cfg_err("network", e))?;
        self.train.validate().map_err(|e| cfg_err("train", e))?;
        for (i, t) in self.train.targets.iter().enumerate() {
            t.validate().map_err(|e| cfg_err(&format!("train.targets[{i}]"), e))?;
        }
        match &self.dataset {
            DatasetSpec::Blobs { train_fraction, .. } | DatasetSpec::Wave { train_fraction, .. }
                if !(*train_fraction > 0.0 && *train_fraction < 1.0) =>
            {
                return Err(CliError::Config(format!(
                    "dataset.train_fraction: must lie in (0, 1), got {train_fraction}"
                )));
            }
            _ => {}
        }
        nipq::analysis::check_factors(&self.analysis.sweep_factors).map_err(|e| cfg_err("analysis.sweep_factors", e))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// `<name>-<first 12 hash digits>-s<seed>`.
    pub fn run_id(&self) -> String {
        format!("{}-{}-s{}", self.name, &self.hash()[..12], self.seed())
    }

    /// Train and test splits.
    pub fn load_data(&self) -> Result<(Dataset<f32>, Dataset<f32>), CliError> {
        let rt = |e: nipq::Error| CliError::Runtime(format!("dataset: {e}"));
        match &self.dataset {
            DatasetSpec::Blobs {
                n,
                classes,
                dim,
                separation,
                noise,
                seed,
                train_fraction,
            } => {
                let d = make_gaussian_blobs_with(*n, *classes, *dim, *separation, *noise, *seed).map_err(rt)?;
                d.split_fraction(*train_fraction, *seed).map_err(rt)
            }
            DatasetSpec::Wave { n, seed, train_fraction } => {
                let d = make_regression_wave(*n, *seed).map_err(rt)?;
                d.split_fraction(*train_fraction, *seed).map_err(rt)
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                classes,
            } => {
                let tr = load_idx_dataset(train_images, train_labels, *classes).map_err(rt)?;
                let te = load_idx_dataset(test_images, test_labels, *classes).map_err(rt)?;
                Ok((tr, te))
            }
        }
    }
}
