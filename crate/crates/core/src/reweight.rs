//! Per-sample weights from the negative head, corrected labels and
//! complementary-label sampling.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::types::{argmax, ProbabilityVector, WeightTable};

/// Default detection threshold on the negative-head probability.
pub const DEFAULT_THRESHOLD: f64 = 0.3;

/// Corrected label per sample index. Empty until the first refresh after
/// warm-up.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorrectedLabels(Option<Vec<usize>>);

impl CorrectedLabels {
    pub fn undefined() -> Self {
        Self(None)
    }

    pub fn from_labels(labels: Vec<usize>) -> Self {
        Self(Some(labels))
    }

    pub fn is_defined(&self) -> bool {
        self.0.is_some()
    }

    /// `None` during warm-up; an error if defined but `index` is missing.
    pub fn get(&self, index: usize) -> Result<Option<usize>> {
        match &self.0 {
            None => Ok(None),
            Some(v) => v
                .get(index)
                .copied()
                .map(Some)
                .ok_or_else(|| Error::invalid(format!("no corrected label for sample {index}"))),
        }
    }

    pub fn as_slice(&self) -> Option<&[usize]> {
        self.0.as_deref()
    }
}

/// `argmax(p_pos + p_neg)`, lowest index on ties.
pub fn corrected_label(p_pos: &ProbabilityVector, p_neg: &ProbabilityVector) -> Result<usize> {
    corrected_label_raw(p_pos.entries(), p_neg.entries())
}

pub(crate) fn corrected_label_raw(p_pos: &[f64], p_neg: &[f64]) -> Result<usize> {
    if p_pos.len() != p_neg.len() {
        return Err(Error::shape(format!(
            "head probability lengths differ: {} vs {}",
            p_pos.len(),
            p_neg.len()
        )));
    }
    let sum: Vec<f64> = p_pos.iter().zip(p_neg).map(|(a, b)| a + b).collect();
    Ok(argmax(&sum))
}

/// Uniform draw from the labels other than `noisy_label` and `corrected`.
///
/// When excluding both leaves nothing (two classes, `corrected` differs
/// from `noisy_label`) only `noisy_label` is excluded.
pub fn sample_complementary<R: Rng + ?Sized>(
    noisy_label: usize,
    corrected: Option<usize>,
    num_classes: usize,
    rng: &mut R,
) -> Result<usize> {
    if num_classes < 2 {
        return Err(Error::invalid(format!(
            "complementary labels need at least 2 classes, got {num_classes}"
        )));
    }
    if noisy_label >= num_classes {
        return Err(Error::invalid(format!(
            "label {noisy_label} outside [0, {num_classes})"
        )));
    }
    let corrected = match corrected {
        Some(k) if k >= num_classes => {
            return Err(Error::invalid(format!(
                "corrected label {k} outside [0, {num_classes})"
            )))
        }
        Some(k) if k != noisy_label && num_classes > 2 => Some(k),
        _ => None,
    };
    // Draw an offset into the candidate list without materialising it.
    let excluded = 1 + corrected.is_some() as usize;
    let mut pick = rng.random_range(0..num_classes - excluded);
    let (lo, hi) = match corrected {
        Some(k) => (noisy_label.min(k), noisy_label.max(k)),
        None => (noisy_label, usize::MAX),
    };
    if pick >= lo {
        pick += 1;
    }
    if pick >= hi {
        pick += 1;
    }
    Ok(pick)
}

fn check_unit_interval(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid(format!("{what}: empty input")));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("{what}: entry {i} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Min-max normalise the negative-head probabilities on the noisy labels
/// over the whole dataset. A constant input maps to all ones.
pub fn update_weights(neg_probs_on_noisy_label: &[f64]) -> Result<WeightTable> {
    check_unit_interval(neg_probs_on_noisy_label, "update_weights")?;
    let (lo, hi) = neg_probs_on_noisy_label
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            (lo.min(p), hi.max(p))
        });
    if hi == lo {
        return Ok(WeightTable::ones(neg_probs_on_noisy_label.len()));
    }
    let range = hi - lo;
    let w = neg_probs_on_noisy_label
        .iter()
        .map(|&p| ((p - lo) / range).clamp(0.0, 1.0))
        .collect();
    WeightTable::from_weights(w)
}

/// Fraction of samples whose probability is strictly below `h`.
pub fn estimate_noise_ratio(neg_probs_on_noisy_label: &[f64], h: f64) -> Result<f64> {
    check_unit_interval(neg_probs_on_noisy_label, "estimate_noise_ratio")?;
    check_threshold(h)?;
    let below = neg_probs_on_noisy_label.iter().filter(|&&p| p < h).count();
    Ok(below as f64 / neg_probs_on_noisy_label.len() as f64)
}

pub(crate) fn check_threshold(h: f64) -> Result<()> {
    if h > 0.0 && h < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold h = {h} must lie in (0, 1)")))
    }
}

/// SOP coefficient `β = 50·r²`.
pub fn beta_from_ratio(r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid(format!("noise ratio {r} outside [0, 1]")));
    }
    Ok(r * r * 50.0)
}

/// Everything produced by one refresh at an epoch boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Refresh {
    pub weights: WeightTable,
    pub corrected: CorrectedLabels,
    pub neg_prob_on_noisy: Vec<f64>,
    pub noise_ratio: f64,
    pub beta: f64,
}

/// Compute weights, corrected labels, `r` and `β` from full-dataset head
/// probabilities (one row per sample, in index order).
pub fn refresh(pos_probs: &[Vec<f64>], neg_probs: &[Vec<f64>], noisy_labels: &[usize], h: f64) -> Result<Refresh> {
    if pos_probs.len() != neg_probs.len() || pos_probs.len() != noisy_labels.len() {
        return Err(Error::shape(format!(
            "refresh inputs disagree on sample count: {} / {} / {}",
            pos_probs.len(),
            neg_probs.len(),
            noisy_labels.len()
        )));
    }
    let mut neg_on_noisy = Vec::with_capacity(noisy_labels.len());
    for (i, (p, &y)) in neg_probs.iter().zip(noisy_labels).enumerate() {
        let v = *p
            .get(y)
            .ok_or_else(|| Error::invalid(format!("sample {i}: label {y} outside head output")))?;
        neg_on_noisy.push(v.clamp(0.0, 1.0));
    }
    let corrected = pos_probs
        .iter()
        .zip(neg_probs)
        .map(|(a, b)| corrected_label_raw(a, b))
        .collect::<Result<Vec<_>>>()?;
    let weights = update_weights(&neg_on_noisy)?;
    let noise_ratio = estimate_noise_ratio(&neg_on_noisy, h)?;
    Ok(Refresh {
        weights,
        corrected: CorrectedLabels::from_labels(corrected),
        beta: beta_from_ratio(noise_ratio)?,
        noise_ratio,
        neg_prob_on_noisy: neg_on_noisy,
    })
}

/// Rows `index,weight,neg_prob_on_noisy_label,corrected_label`.
pub fn write_weight_dump(path: &Path, refresh: &Refresh) -> Result<()> {
    let mut out = String::from("index,weight,neg_prob_on_noisy_label,corrected_label\n");
    let corrected = refresh.corrected.as_slice().unwrap_or(&[]);
    for (i, (w, p)) in refresh
        .weights
        .as_slice()
        .iter()
        .zip(&refresh.neg_prob_on_noisy)
        .enumerate()
    {
        let c = corrected.get(i).map(|c| c.to_string()).unwrap_or_default();
        writeln!(out, "{i},{w},{p},{c}").expect("writing to a String");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn corrected_label_examples() {
        assert_eq!(corrected_label(&pv(&[0.6, 0.4]), &pv(&[0.1, 0.9])).unwrap(), 1);
        let p = pv(&[0.2, 0.5, 0.3]);
        assert_eq!(corrected_label(&p, &p).unwrap(), 1);
        assert_eq!(corrected_label(&pv(&[0.5, 0.5]), &pv(&[0.5, 0.5])).unwrap(), 0);
        assert!(corrected_label(&pv(&[0.5, 0.5]), &pv(&[0.2, 0.3, 0.5])).is_err());
    }

    #[test]
    fn complementary_singletons_and_fallback() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_complementary(0, Some(1), 3, &mut rng).unwrap(), 2);
            assert_eq!(sample_complementary(0, Some(1), 2, &mut rng).unwrap(), 1);
            assert_eq!(sample_complementary(1, None, 2, &mut rng).unwrap(), 0);
        }
        assert!(sample_complementary(0, None, 1, &mut rng).is_err());
        assert!(sample_complementary(3, None, 3, &mut rng).is_err());
    }

    #[test]
    fn complementary_is_uniform_over_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 10];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_complementary(3, Some(7), 10, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[3], 0);
        assert_eq!(counts[7], 0);
        for (k, &n) in counts.iter().enumerate() {
            if k != 3 && k != 7 {
                let f = n as f64 / draws as f64;
                assert!((f - 0.125).abs() < 0.01, "class {k}: {f}");
            }
        }
    }

    #[test]
    fn weight_examples() {
        assert_eq!(update_weights(&[0.2, 0.2, 0.2]).unwrap().as_slice(), &[1.0, 1.0, 1.0]);
        let w = update_weights(&[0.1, 0.5, 0.9]).unwrap();
        let expect = [0.0, 0.5, 1.0];
        for (a, b) in w.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(update_weights(&[]).is_err());
        assert!(update_weights(&[0.5, 1.5]).is_err());
    }

    #[test]
    fn ratio_and_beta_examples() {
        assert_eq!(estimate_noise_ratio(&[0.1, 0.5, 0.9, 0.2], 0.3).unwrap(), 0.5);
        assert_eq!(estimate_noise_ratio(&[0.3, 0.5], 0.3).unwrap(), 0.0);
        assert!(estimate_noise_ratio(&[0.3], 0.0).is_err());
        assert!(estimate_noise_ratio(&[], 0.3).is_err());
        assert_eq!(beta_from_ratio(0.0).unwrap(), 0.0);
        assert!((beta_from_ratio(0.4).unwrap() - 8.0).abs() < 1e-12);
        assert_eq!(beta_from_ratio(1.0).unwrap(), 50.0);
        assert!(beta_from_ratio(1.1).is_err());
        assert_eq!(DEFAULT_THRESHOLD, 0.3);
    }

    #[test]
    fn refresh_composes_the_pieces() {
        let pos = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5]];
        let neg = vec![vec![0.8, 0.2], vec![0.9, 0.1], vec![0.4, 0.6]];
        let r = refresh(&pos, &neg, &[0, 1, 1], 0.3).unwrap();
        assert_eq!(r.neg_prob_on_noisy, vec![0.8, 0.1, 0.6]);
        assert_eq!(r.corrected.as_slice().unwrap(), &[0, 0, 1]);
        assert!((r.noise_ratio - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.weights.as_slice()[1], 0.0);
        assert_eq!(r.weights.as_slice()[0], 1.0);
        assert!((r.beta - 50.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn weight_dump_format() {
        let dir = tempfile::tempdir().unwrap();
        let pos = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let r = refresh(&pos, &pos, &[0, 0], 0.3).unwrap();
        let path = dir.path().join("w.csv");
        write_weight_dump(&path, &r).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(
            text,
            "index,weight,neg_prob_on_noisy_label,corrected_label\n0,1,0.9,0\n1,0,0.2,1\n"
        );
    }

    proptest! {
        #[test]
        fn weights_are_order_invariant(
            v in prop::collection::vec(0.0f64..=1.0, 1..50),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..v.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
            let a = update_weights(&v).unwrap();
            let b = update_weights(&shuffled).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(a.as_slice()[i].to_bits(), b.as_slice()[j].to_bits());
            }
        }

        #[test]
        fn nondegenerate_weights_hit_both_ends(v in prop::collection::vec(0.0f64..=1.0, 2..50)) {
            let w = update_weights(&v).unwrap();
            let (lo, hi) = w.as_slice().iter().fold((2.0f64, -1.0f64), |(l, h), &x| (l.min(x), h.max(x)));
            prop_assert!(lo >= 0.0 && hi <= 1.0);
            if v.iter().any(|&x| x != v[0]) {
                prop_assert_eq!(lo, 0.0);
                prop_assert_eq!(hi, 1.0);
            }
        }

        #[test]
        fn corrected_label_is_scale_invariant(
            a in prop::collection::vec(0.0f64..1.0, 2..8),
            k in 1e-3f64..1e3,
        ) {
            let s: f64 = a.iter().sum::<f64>().max(1e-9);
            let p: Vec<f64> = a.iter().map(|x| x / s).collect();
            let q: Vec<f64> = p.iter().rev().copied().collect();
            let sum: Vec<f64> = p.iter().zip(&q).map(|(x, y)| k * (x + y)).collect();
            prop_assert_eq!(corrected_label_raw(&p, &q).unwrap(), argmax(&sum));
        }

        #[test]
        fn ratio_monotone_in_h(
            v in prop::collection::vec(0.0f64..=1.0, 1..50),
            h1 in 0.01f64..0.99,
            h2 in 0.01f64..0.99,
        ) {
            let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
            prop_assert!(estimate_noise_ratio(&v, lo).unwrap() <= estimate_noise_ratio(&v, hi).unwrap());
        }

        #[test]
        fn complementary_never_hits_excluded(
            c in 2usize..12,
            y in 0usize..12,
            yt in 0usize..12,
            seed in any::<u64>(),
        ) {
            let (y, yt) = (y % c, yt % c);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let k = sample_complementary(y, Some(yt), c, &mut rng).unwrap();
                prop_assert!(k < c && k != y);
                if c > 2 {
                    prop_assert!(k != yt);
                }
            }
        }
    }
}
