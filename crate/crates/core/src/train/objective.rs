//! Per-batch loss assembly and logit gradients.

use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy_grad, feature_l2_grad, kl_divergence_grad, negative_loss_grad, total_loss, weighted_mean,
    ClassBalance, Consistency, LossWeights, PositiveRegularizer, RegularizerBatch, SparseOverParam,
};
use crate::model::{BatchOutputs, OutputGrads};
use crate::nn::Tensor;
use crate::types::softmax_unchecked;

use super::config::Objective;

/// Batch-mean loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub pl: f64,
    pub nl: f64,
    pub sd: f64,
}

impl LossParts {
    pub fn total(&self) -> Result<f64> {
        total_loss(self.pl, self.nl, self.sd)
    }
}

/// Labels and weights for the `b` primary-view rows of a batch.
pub struct BatchTargets<'a> {
    pub indices: &'a [usize],
    pub labels: &'a [usize],
    pub complementary: &'a [usize],
    pub weights: &'a [f64],
}

fn rows(t: &Tensor, range: std::ops::Range<usize>) -> Vec<Vec<f64>> {
    range.map(|i| t.row(i).iter().map(|&v| v as f64).collect()).collect()
}

fn to_tensor(rows: &[Vec<f64>], total_rows: usize) -> Tensor {
    let width = rows.first().map_or(0, Vec::len);
    let mut data = vec![0.0f32; total_rows * width];
    for (dst, src) in data.chunks_mut(width.max(1)).zip(rows) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d = *s as f32;
        }
    }
    Tensor::from_vec(&[total_rows, width], data).expect("sizes agree")
}

/// Evaluate the batch objective and the gradient of its total with respect
/// to every model output.
///
/// `outputs` holds the primary view in rows `0..b` and, when
/// `second_view` is set, the second augmented view in rows `b..2b`; the
/// second view only feeds the consistency term. `lw.beta` must already be
/// set for the current epoch.
pub fn batch_objective(
    objective: Objective,
    outputs: &BatchOutputs,
    targets: &BatchTargets<'_>,
    lw: &LossWeights,
    sop: &mut SparseOverParam,
    second_view: bool,
) -> Result<(LossParts, OutputGrads)> {
    let b = targets.labels.len();
    let n_rows = outputs.len();
    if b == 0 || n_rows != if second_view { 2 * b } else { b } {
        return Err(Error::shape(format!(
            "{n_rows} output rows for {b} targets (second view: {second_view})"
        )));
    }
    if targets.indices.len() != b || targets.complementary.len() != b || targets.weights.len() != b {
        return Err(Error::shape("batch target columns have different lengths"));
    }
    let bf = b as f64;
    let mut parts = LossParts::default();
    let mut grads = OutputGrads::default();

    if objective != Objective::CeOnly {
        let neg = rows(&outputs.negative, 0..b);
        let mut g = Vec::with_capacity(b);
        for (z, &k) in neg.iter().zip(targets.complementary) {
            let (l, gz) = negative_loss_grad(z, k)?;
            parts.nl += l / bf;
            g.push(gz.into_iter().map(|v| v / bf).collect());
        }
        grads.negative = Some(to_tensor(&g, n_rows));
    }
    if objective == Objective::NegativeOnly {
        return Ok((parts, grads));
    }

    let pos = rows(&outputs.positive, 0..b);
    let weights = if objective == Objective::CeOnly {
        vec![1.0; b]
    } else {
        targets.weights.to_vec()
    };
    let mut ce = Vec::with_capacity(b);
    let mut g_pos = Vec::with_capacity(b);
    for ((z, &y), &w) in pos.iter().zip(targets.labels).zip(&weights) {
        let (l, gz) = cross_entropy_grad(z, y)?;
        ce.push(l);
        g_pos.push(gz.into_iter().map(|v| w * v / bf).collect::<Vec<_>>());
    }
    parts.pl = weighted_mean(&ce, &weights)?;

    if objective == Objective::CeOnly {
        grads.positive = Some(to_tensor(&g_pos, n_rows));
        return Ok((parts, grads));
    }

    let second = if second_view {
        Some(rows(&outputs.positive, b..2 * b))
    } else {
        None
    };
    let batch = RegularizerBatch {
        indices: targets.indices,
        labels: targets.labels,
        logits: &pos,
        weights: &weights,
        second_view: second.as_deref(),
    };
    let sop_out = sop.evaluate(&batch, lw.beta)?;
    let cb_out = ClassBalance.evaluate(&batch, lw.delta)?;
    let cons_out = if second_view {
        Some(Consistency.evaluate(&batch, lw.gamma)?)
    } else {
        None
    };
    parts.pl += lw.beta * sop_out.value + lw.delta * cb_out.value;
    for (i, g) in g_pos.iter_mut().enumerate() {
        for (k, v) in g.iter_mut().enumerate() {
            *v += sop_out.grad_logits[i][k] + cb_out.grad_logits[i][k];
        }
    }
    let mut all_pos = g_pos;
    if let Some(c) = cons_out {
        parts.pl += lw.gamma * c.value;
        let c_len = all_pos.first().map_or(0, Vec::len);
        all_pos.extend(c.grad_second_view.unwrap_or_else(|| vec![vec![0.0; c_len]; b]));
    }
    grads.positive = Some(to_tensor(&all_pos, n_rows));

    // Shallow heads learn from the labels, the positive head's distribution
    // and the deep feature; both teacher signals are held constant.
    let t = outputs.shallow_logits.len();
    if t > 0 {
        let teacher: Vec<Vec<f64>> = pos.iter().map(|z| softmax_unchecked(z)).collect();
        let deep = rows(&outputs.deep_feature, 0..b);
        let mut sd_ce = vec![0.0; b];
        let (mut kl_sum, mut l2_sum) = (0.0, 0.0);
        for j in 0..t {
            let zs = rows(&outputs.shallow_logits[j], 0..b);
            let fs = rows(&outputs.shallow_features[j], 0..b);
            let mut gz_rows = Vec::with_capacity(b);
            let mut gf_rows = Vec::with_capacity(b);
            for i in 0..b {
                let w = weights[i];
                let (l_ce, g_ce) = cross_entropy_grad(&zs[i], targets.labels[i])?;
                let (l_kl, g_kl) = kl_divergence_grad(&zs[i], &teacher[i])?;
                let (l_l2, g_l2) = feature_l2_grad(&fs[i], &deep[i])?;
                sd_ce[i] += l_ce;
                kl_sum += l_kl;
                l2_sum += l_l2;
                gz_rows.push(
                    g_ce.iter()
                        .zip(&g_kl)
                        .map(|(a, k)| (w * a + lw.alpha * k) / bf)
                        .collect::<Vec<_>>(),
                );
                gf_rows.push(g_l2.iter().map(|g| lw.lambda * g / bf).collect::<Vec<_>>());
            }
            grads.shallow_logits.push(Some(to_tensor(&gz_rows, n_rows)));
            grads.shallow_features.push(Some(to_tensor(&gf_rows, n_rows)));
        }
        parts.sd = weighted_mean(&sd_ce, &weights)? + lw.alpha * kl_sum / bf + lw.lambda * l2_sum / bf;
    }
    Ok((parts, grads))
}
