use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug)]
pub enum Targets<T: Scalar> {
    Classes {
        labels: Vec<usize>,
        n_classes: usize,
    },
    /// `[N, D]` regression targets.
    Values(Tensor<T>),
}

impl<T: Scalar> Targets<T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Result<Self> {
        Ok(match self {
            Targets::Classes { labels, n_classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
            Targets::Values(v) => Targets::Values(gather_rows(v, idx)?),
        })
    }
}

/// Inputs `[N, ...]` with class or regression targets. Immutable once built.
#[derive(Clone, Debug)]
pub struct Dataset<T: Scalar> {
    pub name: String,
    pub split: Split,
    pub inputs: Tensor<T>,
    pub targets: Targets<T>,
}

fn gather_rows<T: Scalar>(t: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let shape = t.shape();
    let row: usize = shape[1..].iter().product();
    let data = t.data();
    let mut out = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        if i >= shape[0] {
            return Err(invalid(format!("row {i} out of range for {} rows", shape[0])));
        }
        out.extend_from_slice(&data[i * row..(i + 1) * row]);
    }
    let mut s = shape.to_vec();
    s[0] = idx.len();
    Tensor::from_vec(&s, out)
}

impl<T: Scalar> Dataset<T> {
    pub fn new(name: impl Into<String>, inputs: Tensor<T>, targets: Targets<T>) -> Result<Self> {
        if inputs.ndim() < 2 {
            return Err(invalid(format!("inputs need a batch axis, got {:?}", inputs.shape())));
        }
        if inputs.shape()[0] != targets.len() {
            return Err(invalid(format!("{} inputs but {} targets", inputs.shape()[0], targets.len())));
        }
        if let Targets::Classes { labels, n_classes } = &targets {
            if let Some(&bad) = labels.iter().find(|&&l| l >= *n_classes) {
                return Err(invalid(format!("label {bad} >= class count {n_classes}")));
            }
        }
        Ok(Self {
            name: name.into(),
            split: Split::Train,
            inputs,
            targets,
        })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape of one input sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn n_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classes { n_classes, .. } => Some(*n_classes),
            Targets::Values(_) => None,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            name: self.name.clone(),
            split: self.split,
            inputs: gather_rows(&self.inputs, idx)?,
            targets: self.targets.select(idx)?,
        })
    }

    /// The same samples over another scalar type.
    pub fn convert<U: Scalar>(&self) -> Result<Dataset<U>> {
        let cast = |t: &Tensor<T>| Tensor::from_vec(t.shape(), t.data().iter().map(|v| U::lit(v.as_f64())).collect());
        Ok(Dataset {
            name: self.name.clone(),
            split: self.split,
            inputs: cast(&self.inputs)?,
            targets: match &self.targets {
                Targets::Classes { labels, n_classes } => Targets::Classes {
                    labels: labels.clone(),
                    n_classes: *n_classes,
                },
                Targets::Values(v) => Targets::Values(cast(v)?),
            },
        })
    }

    /// Inputs and targets of the given rows.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<T>, Targets<T>)> {
        Ok((gather_rows(&self.inputs, idx)?, self.targets.select(idx)?))
    }

    /// Row indices cut into batches; shuffled when `rng` is given. The last
    /// batch may be short.
    pub fn batch_indices(&self, batch_size: usize, rng: Option<&mut RngStream>) -> Vec<Vec<usize>> {
        let order = match rng {
            Some(r) => r.permutation(self.len()),
            None => (0..self.len()).collect(),
        };
        order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }

    /// Deterministic shuffle then split; the first part is tagged train.
    pub fn split_fraction(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(invalid(format!("train fraction {train_fraction} outside [0, 1]")));
        }
        let order = RngStream::new(seed, 0x5EED).permutation(self.len());
        let cut = (self.len() as f64 * train_fraction).round() as usize;
        Ok((
            self.subset(&order[..cut])?.with_split(Split::Train),
            self.subset(&order[cut..])?.with_split(Split::Test),
        ))
    }
}

pub const DEFAULT_BLOB_SEPARATION: f64 = 5.0;

/// Isotropic Gaussian clusters with unit noise and default separation.
pub fn make_gaussian_blobs<T: Scalar>(n: usize, classes: usize, dim: usize, seed: u64) -> Result<Dataset<T>> {
    make_gaussian_blobs_with(n, classes, dim, DEFAULT_BLOB_SEPARATION, 1.0, seed)
}

/// Class `k` is centered at `separation * e_k` when `classes <= dim`, otherwise
/// at a random Gaussian direction scaled to `separation`. Labels cycle so the
/// classes are balanced.
pub fn make_gaussian_blobs_with<T: Scalar>(
    n: usize,
    classes: usize,
    dim: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    if classes < 2 || dim == 0 || n < classes {
        return Err(invalid(format!(
            "blobs need classes >= 2, dim >= 1 and n >= classes (n={n}, classes={classes}, dim={dim})"
        )));
    }
    let mut rng = RngStream::new(seed, 0xB10B);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|k| {
            if classes <= dim {
                (0..dim).map(|j| if j == k { separation } else { 0.0 }).collect()
            } else {
                let v: Vec<f64> = rng.normal_vec(dim);
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|a| a * separation / norm).collect()
            }
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut x = Vec::with_capacity(n * dim);
    for &l in &labels {
        for &c in &centers[l] {
            x.push(T::lit(c + noise * rng.normal::<f64>()));
        }
    }
    Dataset::new(
        "blobs",
        Tensor::from_vec(&[n, dim], x)?,
        Targets::Classes {
            labels,
            n_classes: classes,
        },
    )
}

/// The regression generator: `sin(2 pi x)`.
pub fn wave(x: f64) -> f64 {
    (2.0 * PI * x).sin()
}

/// `x ~ U[0, 1)`, `y = wave(x)`, shapes `[n, 1]`.
pub fn make_regression_wave<T: Scalar>(n: usize, seed: u64) -> Result<Dataset<T>> {
    if n == 0 {
        return Err(invalid("regression wave needs n >= 1"));
    }
    let xs: Vec<f64> = RngStream::new(seed, 0x3A7E).uniform_vec(n);
    let ys = xs.iter().map(|&x| T::lit(wave(x))).collect();
    Dataset::new(
        "wave",
        Tensor::from_vec(&[n, 1], xs.into_iter().map(T::lit).collect())?,
        Targets::Values(Tensor::from_vec(&[n, 1], ys)?),
    )
}
