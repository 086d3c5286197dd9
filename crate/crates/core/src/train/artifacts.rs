//! Run-directory files: probability dumps, metrics and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

use super::report::{EpochReport, METRICS_HEADER};

pub const CONFIG_SNAPSHOT: &str = "config_snapshot";
pub const METRICS: &str = "metrics.csv";
pub const PROBS_FINAL: &str = "probs_final.csv";
pub const WEIGHTS_FINAL: &str = "weights_final.csv";
pub const NOISE_MASK: &str = "noise_mask.csv";
pub const CHECKPOINT_FINAL: &str = "checkpoint_final";
pub const CHECKPOINT_LAST: &str = "checkpoint_last";
pub const DATASET_MANIFEST: &str = "dataset_manifest.csv";
pub const RUN_MANIFEST: &str = "manifest.json";
pub const WEIGHTS_DIR: &str = "weights";

/// Softmax outputs of both heads for every sample, in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadProbs {
    pub positive: Vec<Vec<f64>>,
    pub negative: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Interrupted,
}

/// Summary written to `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub status: RunStatus,
    pub epochs_completed: usize,
    pub config_snapshot: String,
    /// Paths relative to the run directory.
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn write(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Listed artifacts that are not present on disk.
    pub fn missing(&self, run_dir: &Path) -> Vec<PathBuf> {
        self.artifacts
            .iter()
            .filter(|p| !run_dir.join(p).exists())
            .cloned()
            .collect()
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rows `index,noisy_label,clean_label,neg_prob_on_noisy,pos_prob_on_noisy,
/// corrected_label,pos_0..,neg_0..`.
pub fn probs_final_csv(data: &Dataset, probs: &HeadProbs, corrected: &[usize]) -> String {
    let c = data.num_classes();
    let mut out = String::from("index,noisy_label,clean_label,neg_prob_on_noisy,pos_prob_on_noisy,corrected_label");
    for k in 0..c {
        write!(out, ",pos_{k}").expect("writing to a String");
    }
    for k in 0..c {
        write!(out, ",neg_{k}").expect("writing to a String");
    }
    out.push('\n');
    for (ex, ((p, q), y)) in data
        .examples()
        .iter()
        .zip(probs.positive.iter().zip(&probs.negative).zip(corrected))
    {
        let clean = ex.clean_label.map(|y| y.to_string()).unwrap_or_default();
        write!(
            out,
            "{},{},{clean},{},{},{y}",
            ex.index, ex.noisy_label, q[ex.noisy_label], p[ex.noisy_label]
        )
        .expect("writing to a String");
        for v in p.iter().chain(q) {
            write!(out, ",{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// The per-sample columns of `probs_final.csv` used by detection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbRecord {
    pub index: usize,
    pub noisy_label: usize,
    pub clean_label: Option<usize>,
    pub neg_prob_on_noisy: f64,
    pub pos_prob_on_noisy: f64,
    pub corrected_label: usize,
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, cols: &[&str], i: usize, name: &str) -> Result<T> {
    cols.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("bad or missing `{name}` column"),
    })
}

pub fn read_probs_final(path: &Path) -> Result<Vec<ProbRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("index,noisy_label,clean_label,neg_prob_on_noisy") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "not a probability dump".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let line = i + 2;
            let cols: Vec<&str> = l.split(',').collect();
            Ok(ProbRecord {
                index: field(path, line, &cols, 0, "index")?,
                noisy_label: field(path, line, &cols, 1, "noisy_label")?,
                clean_label: match cols.get(2) {
                    Some(s) if !s.is_empty() => Some(field(path, line, &cols, 2, "clean_label")?),
                    _ => None,
                },
                neg_prob_on_noisy: field(path, line, &cols, 3, "neg_prob_on_noisy")?,
                pos_prob_on_noisy: field(path, line, &cols, 4, "pos_prob_on_noisy")?,
                corrected_label: field(path, line, &cols, 5, "corrected_label")?,
            })
        })
        .collect()
}

/// Parse `metrics.csv` back into reports (in-memory-only fields are unset).
pub fn read_metrics(path: &Path) -> Result<Vec<EpochReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "unexpected metrics header".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let line = i + 2;
            let c: Vec<&str> = l.split(',').collect();
            Ok(EpochReport {
                epoch: field(path, line, &c, 0, "epoch")?,
                loss_total: field(path, line, &c, 1, "loss_total")?,
                loss_pl: field(path, line, &c, 2, "loss_pl")?,
                loss_nl: field(path, line, &c, 3, "loss_nl")?,
                loss_sd: field(path, line, &c, 4, "loss_sd")?,
                train_acc: field(path, line, &c, 5, "train_acc")?,
                train_acc_clean: None,
                test_acc: match c.get(6) {
                    Some(s) if !s.is_empty() => Some(field(path, line, &c, 6, "test_acc")?),
                    _ => None,
                },
                r_est: field(path, line, &c, 7, "r_est")?,
                beta: field(path, line, &c, 8, "beta")?,
                lr: field(path, line, &c, 9, "lr")?,
                seconds: field(path, line, &c, 10, "seconds")?,
                weights_all_one: false,
            })
        })
        .collect()
}
