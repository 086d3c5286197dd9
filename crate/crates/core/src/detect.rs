//! Threshold-based label-noise detection and its evaluation.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::reweight::check_threshold;
use crate::types::Example;

/// `true` marks a sample as (predicted or truly) noisy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseMask(Vec<bool>);

impl NoiseMask {
    pub fn new(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    /// Ground truth from clean labels; `None` if any example lacks one.
    pub fn from_examples(examples: &[Example]) -> Option<Self> {
        examples
            .iter()
            .map(Example::is_mislabelled)
            .collect::<Option<Vec<_>>>()
            .map(Self)
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_from_precision_recall(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

/// Flag samples whose probability is strictly below `h`.
pub fn classify_noise(neg_probs_on_noisy_label: &[f64], h: f64) -> Result<NoiseMask> {
    if neg_probs_on_noisy_label.is_empty() {
        return Err(Error::invalid("classify_noise: empty input"));
    }
    check_threshold(h)?;
    if let Some((i, p)) = neg_probs_on_noisy_label
        .iter()
        .enumerate()
        .find(|(_, p)| !(0.0..=1.0).contains(*p))
    {
        return Err(Error::invalid(format!(
            "classify_noise: entry {i} = {p} outside [0, 1]"
        )));
    }
    Ok(NoiseMask(neg_probs_on_noisy_label.iter().map(|&p| p < h).collect()))
}

pub fn precision_recall_f1(predicted: &NoiseMask, truth: &NoiseMask) -> Result<DetectionMetrics> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!(
            "mask lengths differ: predicted {} vs truth {}",
            predicted.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in predicted.flags().iter().zip(truth.flags()) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = ratio(tp as f64, (tp + fp) as f64);
    let recall = ratio(tp as f64, (tp + fn_) as f64);
    Ok(DetectionMetrics {
        precision,
        recall,
        f1: f1_from_precision_recall(precision, recall),
        tp,
        fp,
        fn_,
        tn,
    })
}

/// Detection metrics at every threshold of a strictly increasing grid.
pub fn threshold_sweep(neg_probs: &[f64], truth: &NoiseMask, h_grid: &[f64]) -> Result<Vec<(f64, DetectionMetrics)>> {
    if h_grid.is_empty() {
        return Err(Error::invalid("threshold grid is empty"));
    }
    if h_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("threshold grid must be strictly increasing"));
    }
    h_grid
        .iter()
        .map(|&h| {
            let mask = classify_noise(neg_probs, h)?;
            Ok((h, precision_recall_f1(&mask, truth)?))
        })
        .collect()
}

/// `steps` evenly spaced thresholds from `h_min` to `h_max` inclusive; a
/// single step yields `[h_min]`.
pub fn linear_grid(h_min: f64, h_max: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("sweep needs at least one step"));
    }
    if steps > 1 && h_max <= h_min {
        return Err(Error::invalid(format!("h_max {h_max} must exceed h_min {h_min}")));
    }
    if steps == 1 {
        return Ok(vec![h_min]);
    }
    let d = (h_max - h_min) / (steps - 1) as f64;
    Ok((0..steps).map(|i| h_min + d * i as f64).collect())
}

/// Rows `h,precision,recall,f1`.
pub fn sweep_csv(rows: &[(f64, DetectionMetrics)]) -> String {
    let mut out = String::from("h,precision,recall,f1\n");
    for (h, m) in rows {
        writeln!(out, "{h},{},{},{}", m.precision, m.recall, m.f1).expect("writing to a String");
    }
    out
}

/// Rows `index,noisy_label,neg_prob,flag_noisy,truth_noisy`; the last
/// column is left empty without ground truth.
pub fn write_noise_mask(
    path: &Path,
    noisy_labels: &[usize],
    neg_probs: &[f64],
    predicted: &NoiseMask,
    truth: Option<&NoiseMask>,
) -> Result<()> {
    let n = noisy_labels.len();
    if neg_probs.len() != n || predicted.len() != n || truth.is_some_and(|t| t.len() != n) {
        return Err(Error::shape("noise mask columns have different lengths"));
    }
    let mut out = String::from("index,noisy_label,neg_prob,flag_noisy,truth_noisy\n");
    for i in 0..n {
        let t = truth.map(|t| (t.flags()[i] as u8).to_string()).unwrap_or_default();
        writeln!(
            out,
            "{i},{},{},{},{t}",
            noisy_labels[i],
            neg_probs[i],
            predicted.flags()[i] as u8
        )
        .expect("writing to a String");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Area under the ROC curve for ranking noisy samples first by ascending
/// `score`, with ties counted as one half. `None` if either class is absent.
pub fn auc_low_score_noisy(score: &[f64], truth: &NoiseMask) -> Result<Option<f64>> {
    if score.len() != truth.len() {
        return Err(Error::shape("score and truth lengths differ"));
    }
    let mut idx: Vec<usize> = (0..score.len()).collect();
    idx.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    let n_noisy = truth.count() as f64;
    let n_clean = truth.len() as f64 - n_noisy;
    if n_noisy == 0.0 || n_clean == 0.0 {
        return Ok(None);
    }
    // Count (noisy, clean) pairs where the noisy sample scores lower.
    let mut wins = 0.0;
    let mut clean_above = n_clean;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && score[idx[j]] == score[idx[i]] {
            j += 1;
        }
        let group = &idx[i..j];
        let noisy_here = group.iter().filter(|&&k| truth.flags()[k]).count() as f64;
        let clean_here = group.len() as f64 - noisy_here;
        clean_above -= clean_here;
        wins += noisy_here * (clean_above + 0.5 * clean_here);
        i = j;
    }
    Ok(Some(wins / (n_noisy * n_clean)))
}
