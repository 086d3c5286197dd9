//! Domain types and elementary probability utilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied inside every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on the sum of a probability vector.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// The set of class labels `0..num_classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    num_classes: usize,
}

impl LabelSpace {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid(format!(
                "a label space needs at least 2 classes, got {num_classes}"
            )));
        }
        Ok(Self { num_classes })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn contains(&self, label: usize) -> bool {
        label < self.num_classes
    }

    pub fn check(&self, label: usize) -> Result<usize> {
        if self.contains(label) {
            Ok(label)
        } else {
            Err(Error::invalid(format!(
                "label {label} outside [0, {})",
                self.num_classes
            )))
        }
    }
}

/// One training or evaluation sample.
///
/// `clean_label` is only ever read by evaluation code; the training loop
/// sees `noisy_label` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub index: usize,
    pub features: Vec<f32>,
    pub noisy_label: usize,
    pub clean_label: Option<usize>,
}

impl Example {
    pub fn is_mislabelled(&self) -> Option<bool> {
        self.clean_label.map(|y| y != self.noisy_label)
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("empty probability vector"));
        }
        if let Some(bad) = entries.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(Error::invalid(format!("probability entry {bad} outside [0, 1]")));
        }
        let total: f64 = entries.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("probability entries sum to {total}, not 1")));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, k: usize) -> Option<f64> {
        self.0.get(k).copied()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ProbabilityVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

/// Per-sample loss weights indexed by [`Example::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    weights: Vec<f64>,
}

impl WeightTable {
    /// The warm-up table: every weight is 1.
    pub fn ones(n: usize) -> Self {
        Self { weights: vec![1.0; n] }
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(0.0..=1.0).contains(*w)) {
            return Err(Error::invalid(format!("weight {w} at index {i} outside [0, 1]")));
        }
        Ok(Self { weights })
    }

    pub fn get(&self, index: usize) -> Result<f64> {
        self.weights.get(index).copied().ok_or_else(|| {
            Error::invalid(format!(
                "no weight for sample index {index} (table holds {})",
                self.weights.len()
            ))
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn all_ones(&self) -> bool {
        self.weights.iter().all(|w| *w == 1.0)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<ProbabilityVector> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::invalid("softmax input contains a non-finite logit"));
    }
    Ok(ProbabilityVector(softmax_unchecked(logits)))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Indicator vector with a 1 at `label`.
pub fn one_hot(label: usize, num_classes: usize) -> Result<Vec<f64>> {
    if label >= num_classes {
        return Err(Error::invalid(format!("label {label} outside [0, {num_classes})")));
    }
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    Ok(v)
}
