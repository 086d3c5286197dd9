//! Positive-head regularisers: sparse over-parameterisation, two-view
//! consistency and class balance.
//!
//! Each one is a [`PositiveRegularizer`]: it reports its batch-mean value
//! and the gradient of `coefficient × value` with respect to the positive
//! logits. Setting a coefficient to 0 disables the term.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::types::{softmax_unchecked, PROB_FLOOR};

/// Inputs shared by every regulariser for one mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct RegularizerBatch<'a> {
    /// Dataset indices of the batch samples.
    pub indices: &'a [usize],
    pub labels: &'a [usize],
    /// Positive-head logits on the primary view.
    pub logits: &'a [Vec<f64>],
    pub weights: &'a [f64],
    /// Positive-head logits on a second augmented view, when computed.
    pub second_view: Option<&'a [Vec<f64>]>,
}

impl RegularizerBatch<'_> {
    fn len(&self) -> usize {
        self.logits.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerOutput {
    /// Batch-mean regulariser value, before the coefficient.
    pub value: f64,
    /// Gradient of `coefficient × value` w.r.t. the primary-view logits.
    pub grad_logits: Vec<Vec<f64>>,
    /// Gradient w.r.t. the second-view logits, if the term uses them.
    pub grad_second_view: Option<Vec<Vec<f64>>>,
}

impl RegularizerOutput {
    fn zeros(b: usize, c: usize) -> Self {
        Self {
            value: 0.0,
            grad_logits: vec![vec![0.0; c]; b],
            grad_second_view: None,
        }
    }
}

pub trait PositiveRegularizer {
    fn name(&self) -> &'static str;

    fn evaluate(&mut self, batch: &RegularizerBatch<'_>, coefficient: f64) -> Result<RegularizerOutput>;

    /// Apply an update to any parameters the regulariser owns.
    fn step(&mut self, _lr: f64) {}
}

/// Softmax Jacobian-vector product: `d/dz` of a function with gradient `g`
/// w.r.t. `p = softmax(z)`.
fn softmax_backward(p: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pk, gk)| pk * (gk - dot)).collect()
}

/// Hyper-parameters of the per-sample slack variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackConfig {
    pub init_mean: f64,
    pub init_std: f64,
    /// Learning-rate multipliers relative to the model's rate.
    pub lr_u_scale: f64,
    pub lr_v_scale: f64,
    pub momentum: f64,
}

impl Default for SlackConfig {
    fn default() -> Self {
        Self {
            init_mean: 1e-8,
            init_std: 1e-9,
            lr_u_scale: 1.0,
            lr_v_scale: 1.0,
            momentum: 0.9,
        }
    }
}

/// Sparse over-parameterised noise model.
///
/// Every sample `i` owns slack vectors `u_i, v_i ∈ [0,1]^c` and the loss is
/// `‖softmax(z_i) + u_i²⊙y_i − v_i²⊙(1−y_i) − y_i‖²` with `y_i` the one-hot
/// given label. Per-sample values are multiplied by the sample weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOverParam {
    num_classes: usize,
    cfg: SlackConfig,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub u_momentum: Vec<f64>,
    pub v_momentum: Vec<f64>,
    pending: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

impl SparseOverParam {
    pub fn new(num_samples: usize, num_classes: usize, cfg: SlackConfig, seed: u64) -> Result<Self> {
        let normal = Normal::new(cfg.init_mean, cfg.init_std.max(0.0))
            .map_err(|e| Error::config("sop.init_std", e.to_string()))?;
        let mut rng = stream_rng(seed, Stream::Slack, 0, 0);
        let n = num_samples * num_classes;
        let mut draw = |_| normal.sample(&mut rng).clamp(0.0, 1.0);
        let u = (0..n).map(&mut draw).collect();
        let v = (0..n).map(&mut draw).collect();
        Ok(Self {
            num_classes,
            cfg,
            u,
            v,
            u_momentum: vec![0.0; n],
            v_momentum: vec![0.0; n],
            pending: Vec::new(),
        })
    }

    pub fn num_samples(&self) -> usize {
        self.u.len() / self.num_classes
    }

    fn row(&self, index: usize) -> std::ops::Range<usize> {
        index * self.num_classes..(index + 1) * self.num_classes
    }

    /// Unweighted slack loss of one sample and its three gradients
    /// (logits, u, v).
    pub fn sample_loss(&self, index: usize, label: usize, logits: &[f64]) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let p = softmax_unchecked(logits);
        let r = self.row(index);
        let (u, v) = (&self.u[r.clone()], &self.v[r]);
        let mut value = 0.0;
        let mut g_p = vec![0.0; self.num_classes];
        let mut g_u = vec![0.0; self.num_classes];
        let mut g_v = vec![0.0; self.num_classes];
        for k in 0..self.num_classes {
            let y = if k == label { 1.0 } else { 0.0 };
            let res = p[k] + u[k] * u[k] * y - v[k] * v[k] * (1.0 - y) - y;
            value += res * res;
            g_p[k] = 2.0 * res;
            g_u[k] = 2.0 * res * 2.0 * u[k] * y;
            g_v[k] = -2.0 * res * 2.0 * v[k] * (1.0 - y);
        }
        (value, softmax_backward(&p, &g_p), g_u, g_v)
    }
}

impl PositiveRegularizer for SparseOverParam {
    fn name(&self) -> &'static str {
        "sop"
    }

    fn evaluate(&mut self, batch: &RegularizerBatch<'_>, coefficient: f64) -> Result<RegularizerOutput> {
        let b = batch.len();
        let mut out = RegularizerOutput::zeros(b, self.num_classes);
        self.pending.clear();
        if coefficient == 0.0 {
            return Ok(out);
        }
        for i in 0..b {
            let idx = batch.indices[i];
            if idx >= self.num_samples() {
                return Err(Error::invalid(format!("no slack variables for sample {idx}")));
            }
            let (value, g_z, g_u, g_v) = self.sample_loss(idx, batch.labels[i], &batch.logits[i]);
            let scale = coefficient * batch.weights[i] / b as f64;
            out.value += batch.weights[i] * value / b as f64;
            out.grad_logits[i] = g_z.iter().map(|g| g * scale).collect();
            self.pending.push((
                idx,
                g_u.iter().map(|g| g * scale).collect(),
                g_v.iter().map(|g| g * scale).collect(),
            ));
        }
        Ok(out)
    }

    fn step(&mut self, lr: f64) {
        let c = self.num_classes;
        let m = self.cfg.momentum;
        for (idx, g_u, g_v) in std::mem::take(&mut self.pending) {
            for k in 0..c {
                let j = idx * c + k;
                self.u_momentum[j] = m * self.u_momentum[j] + g_u[k];
                self.u[j] = (self.u[j] - lr * self.cfg.lr_u_scale * self.u_momentum[j]).clamp(0.0, 1.0);
                self.v_momentum[j] = m * self.v_momentum[j] + g_v[k];
                self.v[j] = (self.v[j] - lr * self.cfg.lr_v_scale * self.v_momentum[j]).clamp(0.0, 1.0);
            }
        }
    }
}

/// `KL(p_view1 ‖ p_view2)` with the first view held constant.
#[derive(Debug, Clone, Copy, Default)]
pub struct Consistency;

impl PositiveRegularizer for Consistency {
    fn name(&self) -> &'static str {
        "consistency"
    }

    fn evaluate(&mut self, batch: &RegularizerBatch<'_>, coefficient: f64) -> Result<RegularizerOutput> {
        let b = batch.len();
        let c = batch.logits.first().map_or(0, Vec::len);
        let mut out = RegularizerOutput::zeros(b, c);
        if coefficient == 0.0 {
            return Ok(out);
        }
        let second = batch
            .second_view
            .ok_or_else(|| Error::invalid("consistency needs second-view logits"))?;
        if second.len() != b {
            return Err(Error::shape(format!(
                "{} second-view rows for batch of {b}",
                second.len()
            )));
        }
        let mut g2 = Vec::with_capacity(b);
        for (z1, z2) in batch.logits.iter().zip(second) {
            let p1 = softmax_unchecked(z1);
            let p2 = softmax_unchecked(z2);
            let value: f64 = p1
                .iter()
                .zip(&p2)
                .filter(|(a, _)| **a > 0.0)
                .map(|(a, q)| a * (a.max(PROB_FLOOR).ln() - q.max(PROB_FLOOR).ln()))
                .sum();
            out.value += value.max(0.0) / b as f64;
            // d KL(p1 ‖ softmax(z2)) / d z2 = p2 − p1
            g2.push(
                p2.iter()
                    .zip(&p1)
                    .map(|(q, a)| coefficient * (q - a) / b as f64)
                    .collect(),
            );
        }
        out.grad_second_view = Some(g2);
        Ok(out)
    }
}

/// `KL(uniform ‖ mean_i softmax(z_i))` over the batch.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClassBalance;

impl PositiveRegularizer for ClassBalance {
    fn name(&self) -> &'static str {
        "class_balance"
    }

    fn evaluate(&mut self, batch: &RegularizerBatch<'_>, coefficient: f64) -> Result<RegularizerOutput> {
        let b = batch.len();
        let c = batch.logits.first().map_or(0, Vec::len);
        let mut out = RegularizerOutput::zeros(b, c);
        if coefficient == 0.0 || b == 0 {
            return Ok(out);
        }
        let probs: Vec<Vec<f64>> = batch.logits.iter().map(|z| softmax_unchecked(z)).collect();
        let mut mean = vec![0.0; c];
        for p in &probs {
            mean.iter_mut().zip(p).for_each(|(m, pk)| *m += pk / b as f64);
        }
        let prior = 1.0 / c as f64;
        out.value = mean
            .iter()
            .map(|m| prior * (prior.ln() - m.max(PROB_FLOOR).ln()))
            .sum::<f64>()
            .max(0.0);
        // d value / d mean_k = -prior / mean_k
        let a: Vec<f64> = mean.iter().map(|m| -prior / m.max(PROB_FLOOR)).collect();
        for (row, p) in out.grad_logits.iter_mut().zip(&probs) {
            let g = softmax_backward(p, &a);
            *row = g.iter().map(|x| coefficient * x / b as f64).collect();
        }
        Ok(out)
    }
}
