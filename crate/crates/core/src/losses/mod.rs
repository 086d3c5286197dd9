//! Loss terms and their gradients.
//!
//! Scalar functions take probability vectors; the `*_grad` variants take
//! logits and return `(value, d value / d logits)`. All logarithms are
//! floored at [`PROB_FLOOR`]. Everything here is `f64`.

pub mod regularizers;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{softmax_unchecked, ProbabilityVector, PROB_FLOOR};

pub use regularizers::{
    ClassBalance, Consistency, PositiveRegularizer, RegularizerBatch, RegularizerOutput, SlackConfig, SparseOverParam,
};

/// Coefficients of the composite objective.
///
/// `beta` is not configured directly; the training loop derives it from the
/// estimated noise ratio at every weight refresh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// KL coefficient of the self-distillation term.
    pub alpha: f64,
    /// Feature-L2 coefficient of the self-distillation term.
    pub lambda: f64,
    #[serde(skip)]
    pub beta: f64,
    /// Consistency coefficient.
    pub gamma: f64,
    /// Class-balance coefficient.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lambda: 1e-6,
            beta: 0.0,
            gamma: 0.9,
            delta: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(
                    format!("loss.{name}"),
                    format!("coefficient must be a non-negative finite number, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Pre-computed values of the three positive-head regularisers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegularizerTerms {
    pub sop: f64,
    pub consistency: f64,
    pub class_balance: f64,
}

fn check_label(label: usize, c: usize) -> Result<()> {
    if label >= c {
        return Err(Error::invalid(format!("label {label} outside [0, {c})")));
    }
    Ok(())
}

fn floor_ln(x: f64) -> f64 {
    x.max(PROB_FLOOR).ln()
}

/// `-log p[label]`.
pub fn cross_entropy(p: &ProbabilityVector, label: usize) -> Result<f64> {
    check_label(label, p.len())?;
    Ok(-floor_ln(p.entries()[label]))
}

/// `-log(1 - p[complementary])`.
pub fn negative_loss(p: &ProbabilityVector, complementary: usize) -> Result<f64> {
    check_label(complementary, p.len())?;
    Ok(-floor_ln(1.0 - p.entries()[complementary]))
}

/// `Σ p_k log(p_k / q_k)`; zero-probability entries of `p` contribute 0.
pub fn kl_divergence(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!(
            "KL between vectors of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let kl = p
        .entries()
        .iter()
        .zip(q.entries())
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(pk, qk)| pk * (floor_ln(*pk) - floor_ln(*qk)))
        .sum::<f64>();
    Ok(kl.max(0.0))
}

/// Squared Euclidean distance between a student feature and the teacher feature.
pub fn feature_l2(student: &[f64], teacher: &[f64]) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(Error::shape(format!(
            "feature L2 between lengths {} and {}",
            student.len(),
            teacher.len()
        )));
    }
    Ok(student.iter().zip(teacher).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Single-sample self-distillation loss:
/// `Σ_j CE(p^j, ȳ) + α Σ_j KL(p^j, p_ens) + λ Σ_j ‖F_j − F_pl‖²`.
pub fn self_distillation_loss(
    shallow_probs: &[ProbabilityVector],
    label: usize,
    p_ens: &ProbabilityVector,
    shallow_features: &[Vec<f64>],
    deep_feature: &[f64],
    lw: &LossWeights,
) -> Result<f64> {
    if shallow_probs.len() != shallow_features.len() {
        return Err(Error::shape(format!(
            "{} shallow predictions but {} shallow features",
            shallow_probs.len(),
            shallow_features.len()
        )));
    }
    let mut ce = 0.0;
    let mut kl = 0.0;
    let mut l2 = 0.0;
    for (p, f) in shallow_probs.iter().zip(shallow_features) {
        ce += cross_entropy(p, label)?;
        kl += kl_divergence(p, p_ens)?;
        l2 += feature_l2(f, deep_feature)?;
    }
    Ok(ce + lw.alpha * kl + lw.lambda * l2)
}

/// Positive-head loss: `CE + β·sop + γ·consistency + δ·class_balance`.
pub fn positive_loss(
    p_pos: &ProbabilityVector,
    label: usize,
    terms: RegularizerTerms,
    lw: &LossWeights,
) -> Result<f64> {
    lw.validate()?;
    for (name, v) in [
        ("sop", terms.sop),
        ("consistency", terms.consistency),
        ("class_balance", terms.class_balance),
    ] {
        if v < 0.0 {
            return Err(Error::invalid(format!("{name} regulariser value {v} is negative")));
        }
    }
    Ok(cross_entropy(p_pos, label)?
        + lw.beta * terms.sop
        + lw.gamma * terms.consistency
        + lw.delta * terms.class_balance)
}

/// The overall objective: plain sum of the three head losses.
pub fn total_loss(l_pl: f64, l_nl: f64, l_sd: f64) -> Result<f64> {
    if !(l_pl.is_finite() && l_nl.is_finite() && l_sd.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite loss component ({l_pl}, {l_nl}, {l_sd})"
        )));
    }
    Ok(l_pl + l_nl + l_sd)
}

/// `Σ w_i l_i / n`. The denominator is the batch size, not `Σ w`, so that
/// down-weighting shrinks the objective.
pub fn weighted_mean(losses: &[f64], weights: &[f64]) -> Result<f64> {
    if losses.len() != weights.len() {
        return Err(Error::shape(format!(
            "{} losses but {} weights",
            losses.len(),
            weights.len()
        )));
    }
    if losses.is_empty() {
        return Err(Error::invalid("weighted mean of an empty batch"));
    }
    if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::invalid(format!("weight {w} outside [0, 1]")));
    }
    let total: f64 = losses.iter().zip(weights).map(|(l, w)| l * w).sum();
    Ok(total / losses.len() as f64)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::invalid("need at least two logits"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::invalid("non-finite logit"));
    }
    Ok(())
}

/// Cross-entropy on logits. Gradient is `softmax(z) − e_label`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    check_logits(logits)?;
    check_label(label, logits.len())?;
    let p = softmax_unchecked(logits);
    let value = -log_softmax(logits)[label].max(PROB_FLOOR.ln());
    let mut grad = p;
    grad[label] -= 1.0;
    Ok((value, grad))
}

/// Negative-learning loss on logits.
///
/// `1 − p_ŷ` is evaluated as the softmax mass of the remaining classes so
/// the loss stays accurate when `p_ŷ` approaches 1. The returned gradient
/// is that of the unfloored loss, which is bounded by 1 in every entry.
pub fn negative_loss_grad(logits: &[f64], complementary: usize) -> Result<(f64, Vec<f64>)> {
    check_logits(logits)?;
    check_label(complementary, logits.len())?;
    let p = softmax_unchecked(logits);
    let q = p[complementary];
    let rest: Vec<f64> = logits
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != complementary)
        .map(|(_, z)| *z)
        .collect();
    let max_all = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse_all = max_all + logits.iter().map(|z| (z - max_all).exp()).sum::<f64>().ln();
    let max_rest = rest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse_rest = max_rest + rest.iter().map(|z| (z - max_rest).exp()).sum::<f64>().ln();
    let log_one_minus_q = (lse_rest - lse_all).max(PROB_FLOOR.ln());
    let rest_probs = softmax_unchecked(&rest);
    let mut grad = Vec::with_capacity(logits.len());
    let mut r = rest_probs.into_iter();
    for k in 0..logits.len() {
        if k == complementary {
            grad.push(q);
        } else {
            grad.push(-q * r.next().expect("one entry per remaining class"));
        }
    }
    Ok((-log_one_minus_q, grad))
}

/// `KL(softmax(student_logits) ‖ teacher)` with the teacher held constant.
pub fn kl_divergence_grad(student_logits: &[f64], teacher: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_logits(student_logits)?;
    if teacher.len() != student_logits.len() {
        return Err(Error::shape(format!(
            "KL between lengths {} and {}",
            student_logits.len(),
            teacher.len()
        )));
    }
    let p = softmax_unchecked(student_logits);
    let logp = log_softmax(student_logits);
    let ratio: Vec<f64> = logp
        .iter()
        .zip(teacher)
        .map(|(lp, q)| lp.max(PROB_FLOOR.ln()) - floor_ln(*q))
        .collect();
    let value: f64 = p.iter().zip(&ratio).map(|(pk, rk)| pk * rk).sum();
    let grad = p.iter().zip(&ratio).map(|(pm, rm)| pm * (rm - value)).collect();
    Ok((value.max(0.0), grad))
}

/// Feature L2 with the teacher feature held constant; gradient `2(F_j − F_pl)`.
pub fn feature_l2_grad(student: &[f64], teacher: &[f64]) -> Result<(f64, Vec<f64>)> {
    let value = feature_l2(student, teacher)?;
    let grad = student.iter().zip(teacher).map(|(a, b)| 2.0 * (a - b)).collect();
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{one_hot, softmax};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cross_entropy_examples() {
        assert_abs_diff_eq!(cross_entropy(&pv(&[0.25; 4]), 0).unwrap(), 1.386294, epsilon = 1e-6);
        assert_eq!(cross_entropy(&pv(&[0.0, 1.0, 0.0]), 1).unwrap(), 0.0);
        // -ln 0.2
        assert_abs_diff_eq!(
            cross_entropy(&pv(&[0.7, 0.2, 0.1]), 1).unwrap(),
            1.609438,
            epsilon = 1e-6
        );
        assert!(cross_entropy(&pv(&[0.5, 0.5]), 2).is_err());
    }

    #[test]
    fn cross_entropy_floor_keeps_it_finite() {
        let v = cross_entropy(&pv(&[1.0, 0.0]), 1).unwrap();
        assert_abs_diff_eq!(v, -(1e-12f64).ln(), epsilon = 1e-9);
    }

    #[test]
    fn negative_loss_examples() {
        // -ln 0.5
        assert_abs_diff_eq!(
            negative_loss(&pv(&[0.5, 0.5]), 0).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-6
        );
        assert_eq!(negative_loss(&pv(&[0.0, 1.0]), 0).unwrap(), 0.0);
        // -ln 0.1
        assert_abs_diff_eq!(
            negative_loss(&pv(&[0.9, 0.05, 0.05]), 0).unwrap(),
            std::f64::consts::LN_10,
            epsilon = 1e-6
        );
        assert!(negative_loss(&pv(&[0.5, 0.5]), 5).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&pv(&[0.3, 0.7]), &pv(&[0.3, 0.7])).unwrap(), 0.0);
        // ln 2
        assert_abs_diff_eq!(
            kl_divergence(&pv(&[1.0, 0.0]), &pv(&[0.5, 0.5])).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-6
        );
        // 0.5 ln 2 + 0.5 ln(2/3)
        assert_abs_diff_eq!(
            kl_divergence(&pv(&[0.5, 0.5]), &pv(&[0.25, 0.75])).unwrap(),
            0.143841,
            epsilon = 1e-6
        );
        assert!(kl_divergence(&pv(&[0.5, 0.5]), &pv(&[0.2, 0.3, 0.5])).is_err());
    }

    #[test]
    fn feature_l2_examples() {
        assert_eq!(feature_l2(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), 0.0);
        assert_eq!(feature_l2(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert_eq!(feature_l2(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        assert!(feature_l2(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn self_distillation_examples() {
        let lw = LossWeights::default();
        let ens = pv(&[0.5, 0.5]);
        assert_eq!(self_distillation_loss(&[], 0, &ens, &[], &[1.0], &lw).unwrap(), 0.0);

        let onehot = pv(&one_hot(1, 3).unwrap());
        let f = vec![0.3, -0.2];
        let v = self_distillation_loss(
            std::slice::from_ref(&onehot),
            1,
            &onehot,
            std::slice::from_ref(&f),
            &f,
            &lw,
        )
        .unwrap();
        assert_eq!(v, 0.0);

        let v = self_distillation_loss(&[pv(&[0.5, 0.5])], 0, &ens, std::slice::from_ref(&f), &f, &lw).unwrap();
        assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-6);

        assert!(self_distillation_loss(std::slice::from_ref(&ens), 0, &ens, &[], &f, &lw).is_err());
    }

    #[test]
    fn positive_loss_examples() {
        let p = pv(&[0.7, 0.2, 0.1]);
        let ce = cross_entropy(&p, 0).unwrap();
        let lw = LossWeights {
            beta: 3.0,
            ..LossWeights::default()
        };
        assert_eq!(positive_loss(&p, 0, RegularizerTerms::default(), &lw).unwrap(), ce);

        // CE = 1 exactly: p_label = 1/e.
        let e = std::f64::consts::E;
        let p = pv(&[1.0 / e, 1.0 - 1.0 / e]);
        let lw = LossWeights {
            beta: 8.0,
            gamma: 0.9,
            delta: 0.1,
            ..LossWeights::default()
        };
        let terms = RegularizerTerms {
            sop: 0.5,
            consistency: 0.2,
            class_balance: 0.1,
        };
        assert_abs_diff_eq!(positive_loss(&p, 0, terms, &lw).unwrap(), 5.19, epsilon = 1e-12);

        let zero = LossWeights {
            beta: 0.0,
            gamma: 0.0,
            delta: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(positive_loss(&p, 0, terms, &zero).unwrap(), 1.0);

        let negative = LossWeights {
            gamma: -1.0,
            ..LossWeights::default()
        };
        assert!(positive_loss(&p, 0, terms, &negative).is_err());
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(total_loss(5.19, 0.75, 0.0).unwrap(), 5.94, epsilon = 1e-12);
        assert_eq!(total_loss(1.5, 2.25, 0.5).unwrap(), total_loss(2.25, 1.5, 0.5).unwrap());
        assert!(total_loss(f64::NAN, 0.0, 0.0).is_err());
        assert!(total_loss(0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn weighted_mean_examples() {
        assert_eq!(weighted_mean(&[1.0, 2.0, 3.0], &[1.0; 3]).unwrap(), 2.0);
        assert_eq!(weighted_mean(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(weighted_mean(&[1.0, 3.0], &[1.0, 0.5]).unwrap(), 1.25);
        assert!(weighted_mean(&[1.0], &[1.0, 1.0]).is_err());
        assert!(weighted_mean(&[1.0], &[1.5]).is_err());
    }

    #[test]
    fn logit_forms_agree_with_probability_forms() {
        let z = [0.3, -1.2, 2.0, 0.1];
        let p = softmax(&z).unwrap();
        let q = pv(&[0.1, 0.2, 0.3, 0.4]);
        assert_abs_diff_eq!(
            cross_entropy_grad(&z, 2).unwrap().0,
            cross_entropy(&p, 2).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            negative_loss_grad(&z, 2).unwrap().0,
            negative_loss(&p, 2).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            kl_divergence_grad(&z, q.entries()).unwrap().0,
            kl_divergence(&p, &q).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn negative_loss_is_stable_for_saturated_logits() {
        let (v, g) = negative_loss_grad(&[60.0, 0.0, 0.0], 0).unwrap();
        // 1 - p0 = 2 e^-60 / (1 + 2 e^-60) ~ 2 e^-60 < floor
        assert_abs_diff_eq!(v, -(1e-12f64).ln(), epsilon = 1e-9);
        assert!(g.iter().all(|x| x.is_finite() && x.abs() <= 1.0));
        let (v, _) = negative_loss_grad(&[20.0, 0.0, 0.0], 0).unwrap();
        let exact = -((2.0 * (-20.0f64).exp()) / (1.0 + 2.0 * (-20.0f64).exp())).ln();
        assert_abs_diff_eq!(v, exact, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn negative_loss_increases_with_complementary_mass(a in 0.0f64..0.99, d in 0.0001f64..0.01) {
            let b = (a + d).min(0.999);
            let lo = negative_loss(&pv(&[a, 1.0 - a]), 0).unwrap();
            let hi = negative_loss(&pv(&[b, 1.0 - b]), 0).unwrap();
            prop_assert!(hi >= lo);
        }

        #[test]
        fn cross_entropy_decreases_with_label_mass(a in 0.001f64..0.99, d in 0.0001f64..0.01) {
            let b = (a + d).min(1.0);
            let lo = cross_entropy(&pv(&[a, 1.0 - a]), 0).unwrap();
            let hi = cross_entropy(&pv(&[b, 1.0 - b]), 0).unwrap();
            prop_assert!(hi <= lo);
        }

        #[test]
        fn kl_is_non_negative_and_zero_on_identity(
            z in prop::collection::vec(-5.0f64..5.0, 2..6),
            w in prop::collection::vec(-5.0f64..5.0, 2..6),
        ) {
            let n = z.len().min(w.len());
            let p = softmax(&z[..n]).unwrap();
            let q = softmax(&w[..n]).unwrap();
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
            prop_assert!(kl_divergence(&p, &p).unwrap() < 1e-9);
        }
    }
}
