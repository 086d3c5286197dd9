//! CIFAR-10 / CIFAR-100 binary batch layout.
//!
//! CIFAR-10 records are `label:u8, pixels:[u8; 3072]` in
//! `data_batch_{1..5}.bin` and `test_batch.bin`. CIFAR-100 records are
//! `coarse:u8, fine:u8, pixels:[u8; 3072]` in `train.bin` and `test.bin`;
//! the fine label is used. Pixels are channel-major 32×32.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::types::{Example, LabelSpace};

const PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl CifarVariant {
    fn files(self, split: Split) -> Vec<&'static str> {
        match (self, split) {
            (CifarVariant::Cifar10, Split::Train) => vec![
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            (CifarVariant::Cifar10, Split::Test) => vec!["test_batch.bin"],
            (CifarVariant::Cifar100, Split::Train) => vec!["train.bin"],
            (CifarVariant::Cifar100, Split::Test) => vec!["test.bin"],
        }
    }

    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    /// Per-channel mean and standard deviation of the training images.
    fn stats(self) -> ([f32; 3], [f32; 3]) {
        match self {
            CifarVariant::Cifar10 => ([0.4914, 0.4822, 0.4465], [0.2470, 0.2435, 0.2616]),
            CifarVariant::Cifar100 => ([0.5071, 0.4865, 0.4409], [0.2673, 0.2564, 0.2762]),
        }
    }
}

/// Load a split, normalising each channel; `limit` keeps the first N
/// records. Clean and noisy labels are both set to the file's label.
pub fn load_cifar(dir: &Path, variant: CifarVariant, split: Split, limit: Option<usize>) -> Result<Dataset> {
    let record = variant.label_bytes() + PIXELS;
    let (mean, std) = variant.stats();
    let label_space = LabelSpace::new(variant.num_classes())?;
    let mut examples = Vec::new();
    'files: for name in variant.files(split) {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % record != 0 {
            return Err(Error::Parse {
                path,
                line: 0,
                message: format!("size {} is not a multiple of the {record}-byte record", bytes.len()),
            });
        }
        for (r, chunk) in bytes.chunks_exact(record).enumerate() {
            if limit.is_some_and(|l| examples.len() >= l) {
                break 'files;
            }
            let label = chunk[variant.label_bytes() - 1] as usize;
            if label >= variant.num_classes() {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: r + 1,
                    message: format!("record {r} has label {label}"),
                });
            }
            let features = chunk[variant.label_bytes()..]
                .iter()
                .enumerate()
                .map(|(k, &b)| {
                    let ch = k / 1024;
                    (b as f32 / 255.0 - mean[ch]) / std[ch]
                })
                .collect();
            examples.push(Example {
                index: examples.len(),
                features,
                noisy_label: label,
                clean_label: Some(label),
            });
        }
    }
    Dataset::new(label_space, vec![3, 32, 32], examples)
}
