use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One row of `metrics.csv` plus in-memory extras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 0-based epoch index.
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_pl: f64,
    pub loss_nl: f64,
    pub loss_sd: f64,
    /// EMA-model accuracy against the (noisy) training labels.
    pub train_acc: f64,
    /// EMA-model accuracy against the clean training labels; evaluation
    /// only, not written to `metrics.csv`.
    pub train_acc_clean: Option<f64>,
    pub test_acc: Option<f64>,
    pub r_est: f64,
    pub beta: f64,
    pub lr: f64,
    pub seconds: f64,
    /// Whether every sample weight used during the epoch was 1.
    pub weights_all_one: bool,
}

pub const METRICS_HEADER: &str = "epoch,loss_total,loss_pl,loss_nl,loss_sd,train_acc,test_acc,r_est,beta,lr,seconds";

impl EpochReport {
    pub fn csv_row(&self) -> String {
        let test = self.test_acc.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{test},{},{},{},{}",
            self.epoch,
            self.loss_total,
            self.loss_pl,
            self.loss_nl,
            self.loss_sd,
            self.train_acc,
            self.r_est,
            self.beta,
            self.lr,
            self.seconds
        )
    }
}

pub fn metrics_csv(reports: &[EpochReport]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in reports {
        writeln!(out, "{}", r.csv_row()).expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_layout() {
        let r = EpochReport {
            epoch: 2,
            loss_total: 1.5,
            loss_pl: 1.0,
            loss_nl: 0.25,
            loss_sd: 0.25,
            train_acc: 0.5,
            train_acc_clean: Some(0.9),
            test_acc: None,
            r_est: 0.0,
            beta: 0.0,
            lr: 0.04,
            seconds: 0.0,
            weights_all_one: true,
        };
        assert_eq!(
            metrics_csv(&[r]),
            format!("{METRICS_HEADER}\n2,1.5,1,0.25,0.25,0.5,,0,0,0.04,0\n")
        );
    }
}
