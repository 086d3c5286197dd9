//! Datasets: synthetic blobs, CIFAR binary batches, label-noise injection
//! and noisy-label sidecars.

mod augment;
mod blobs;
mod cifar;
mod noise;
mod sidecar;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect::NoiseMask;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{derive_seed, Stream};
use crate::types::{Example, LabelSpace};

pub use augment::{two_view_augment, AugmentConfig};
pub use blobs::make_gaussian_blobs;
pub use cifar::{load_cifar, CifarVariant, Split};
pub use noise::{inject_pairflip_noise, inject_symmetric_noise, NoiseKind, NoiseSpec};
pub use sidecar::{dump_sidecar, load_noisy_sidecar, parse_sidecar};

/// A labelled dataset whose example indices equal their positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    label_space: LabelSpace,
    feature_shape: Vec<usize>,
    examples: Vec<Example>,
}

impl Dataset {
    pub fn new(label_space: LabelSpace, feature_shape: Vec<usize>, examples: Vec<Example>) -> Result<Self> {
        let width: usize = feature_shape.iter().product();
        if width == 0 {
            return Err(Error::shape(format!("feature shape {feature_shape:?} is empty")));
        }
        for (pos, ex) in examples.iter().enumerate() {
            if ex.index != pos {
                return Err(Error::invalid(format!(
                    "example at position {pos} has index {}",
                    ex.index
                )));
            }
            if ex.features.len() != width {
                return Err(Error::shape(format!(
                    "example {pos} has {} features, expected {width}",
                    ex.features.len()
                )));
            }
            label_space.check(ex.noisy_label)?;
            if let Some(y) = ex.clean_label {
                label_space.check(y)?;
            }
        }
        Ok(Self {
            label_space,
            feature_shape,
            examples,
        })
    }

    pub fn label_space(&self) -> LabelSpace {
        self.label_space
    }

    pub fn num_classes(&self) -> usize {
        self.label_space.num_classes()
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.feature_shape
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn noisy_labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.noisy_label).collect()
    }

    pub fn clean_labels(&self) -> Option<Vec<usize>> {
        self.examples.iter().map(|e| e.clean_label).collect()
    }

    /// Ground-truth noise mask; `None` without clean labels.
    pub fn truth_mask(&self) -> Option<NoiseMask> {
        NoiseMask::from_examples(&self.examples)
    }

    /// Replace the noisy labels, keeping everything else.
    pub fn with_noisy_labels(&self, labels: &[usize]) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} labels for a dataset of {} examples",
                labels.len(),
                self.len()
            )));
        }
        let mut out = self.clone();
        for (ex, &y) in out.examples.iter_mut().zip(labels) {
            ex.noisy_label = self.label_space.check(y)?;
        }
        Ok(out)
    }

    /// Stack the features of `indices` into a batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.feature_shape.iter().product::<usize>());
        for &i in indices {
            let ex = self
                .examples
                .get(i)
                .ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))?;
            data.extend_from_slice(&ex.features);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.feature_shape);
        Tensor::from_vec(&shape, data)
    }

    /// Population standard deviation of every feature.
    pub fn feature_std(&self) -> Vec<f32> {
        let width: usize = self.feature_shape.iter().product();
        let n = self.len().max(1) as f64;
        let mut mean = vec![0.0f64; width];
        for ex in &self.examples {
            for (m, &x) in mean.iter_mut().zip(&ex.features) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; width];
        for ex in &self.examples {
            for ((v, &x), m) in var.iter_mut().zip(&ex.features).zip(&mean) {
                *v += (x as f64 - m).powi(2);
            }
        }
        var.iter().map(|v| (v / n).sqrt() as f32).collect()
    }

    /// Rows `index,clean_label,noisy_label` for auditing.
    pub fn manifest_csv(&self) -> String {
        let mut out = String::from("index,clean_label,noisy_label\n");
        for ex in &self.examples {
            let clean = ex.clean_label.map(|y| y.to_string()).unwrap_or_default();
            writeln!(out, "{},{clean},{}", ex.index, ex.noisy_label).expect("writing to a String");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Blobs,
    Cifar10,
    Cifar100,
}

/// Where the training and test sets come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: Source,
    pub num_classes: usize,
    /// Blobs: training-set size.
    #[serde(default)]
    pub n: usize,
    /// Blobs: clean test-set size (0 disables test accuracy).
    #[serde(default)]
    pub test_n: usize,
    #[serde(default)]
    pub dim: usize,
    #[serde(default)]
    pub separation: f64,
    /// CIFAR: directory holding the binary batches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// CIFAR: keep only the first N training / test records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
    /// Dataset seed; defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("data.num_classes", "need at least 2 classes"));
        }
        match self.source {
            Source::Blobs => {
                if self.n < self.num_classes {
                    return Err(Error::config("data.n", "need at least one sample per class"));
                }
                if self.dim < self.num_classes {
                    return Err(Error::config(
                        "data.dim",
                        "blob means sit on the first num_classes axes, so dim must be at least num_classes",
                    ));
                }
                if !(self.separation > 0.0) {
                    return Err(Error::config("data.separation", "must be positive"));
                }
            }
            Source::Cifar10 | Source::Cifar100 => {
                if self.path.is_none() {
                    return Err(Error::config("data.path", "CIFAR sources need a data directory"));
                }
                let expect = if self.source == Source::Cifar10 { 10 } else { 100 };
                if self.num_classes != expect {
                    return Err(Error::config(
                        "data.num_classes",
                        format!("{:?} has {expect} classes", self.source),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Build `(train, test)`. Noise is not applied here.
    pub fn build(&self, run_seed: u64) -> Result<(Dataset, Option<Dataset>)> {
        self.validate()?;
        let seed = self.seed.unwrap_or(run_seed);
        match self.source {
            Source::Blobs => {
                let train = make_gaussian_blobs(self.n, self.num_classes, self.dim, self.separation, seed)?;
                let test = if self.test_n > 0 {
                    let test_seed = derive_seed(seed, Stream::Data, 1, 0);
                    Some(make_gaussian_blobs(
                        self.test_n.max(self.num_classes),
                        self.num_classes,
                        self.dim,
                        self.separation,
                        test_seed,
                    )?)
                } else {
                    None
                };
                Ok((train, test))
            }
            Source::Cifar10 | Source::Cifar100 => {
                let variant = if self.source == Source::Cifar10 {
                    CifarVariant::Cifar10
                } else {
                    CifarVariant::Cifar100
                };
                let dir = self.path.as_deref().expect("validated");
                let train = load_cifar(dir, variant, Split::Train, self.train_limit)?;
                let test = load_cifar(dir, variant, Split::Test, self.test_limit)?;
                Ok((train, Some(test)))
            }
        }
    }
}

/// Apply a noise specification to a dataset built from clean labels.
pub fn apply_noise(dataset: &Dataset, spec: &NoiseSpec, run_seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let seed = spec.seed.unwrap_or_else(|| derive_seed(run_seed, Stream::Noise, 0, 0));
    match spec.kind {
        NoiseKind::Symmetric => inject_symmetric_noise(dataset, spec.rate, seed),
        NoiseKind::Pairflip => inject_pairflip_noise(dataset, spec.rate, seed),
        NoiseKind::Sidecar => {
            let path = spec.sidecar_path.as_deref().expect("validated");
            load_noisy_sidecar(dataset, path)
        }
    }
}

pub fn write_manifest(path: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::write(path, dataset.manifest_csv()).map_err(|e| Error::io(path, e))
}
