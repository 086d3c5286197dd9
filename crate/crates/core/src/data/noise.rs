use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Symmetric,
    Pairflip,
    Sidecar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Flip probability; ignored for sidecars.
    #[serde(default)]
    pub rate: f64,
    /// Defaults to a value derived from the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar_path: Option<PathBuf>,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::config("noise.rate", format!("{} outside [0, 1]", self.rate)));
        }
        if self.kind == NoiseKind::Sidecar && self.sidecar_path.is_none() {
            return Err(Error::config("noise.sidecar_path", "sidecar noise needs a file"));
        }
        Ok(())
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::invalid(format!("noise rate {rate} outside [0, 1]")))
    }
}

fn clean_labels(dataset: &Dataset) -> Result<Vec<usize>> {
    dataset
        .clean_labels()
        .ok_or_else(|| Error::invalid("noise injection needs clean labels on every example"))
}

/// Each label independently moves, with probability `rate`, to a
/// uniformly chosen different class.
pub fn inject_symmetric_noise(dataset: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    check_rate(rate)?;
    let clean = clean_labels(dataset)?;
    let c = dataset.num_classes();
    let mut rng = stream_rng(seed, Stream::Noise, 0, 0);
    let noisy: Vec<usize> = clean
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < rate {
                let k = rng.random_range(0..c - 1);
                if k >= y {
                    k + 1
                } else {
                    k
                }
            } else {
                y
            }
        })
        .collect();
    dataset.with_noisy_labels(&noisy)
}

/// With probability `rate`, label `k` becomes `(k + 1) mod c`.
pub fn inject_pairflip_noise(dataset: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    check_rate(rate)?;
    let clean = clean_labels(dataset)?;
    let c = dataset.num_classes();
    let mut rng = stream_rng(seed, Stream::Noise, 1, 0);
    let noisy: Vec<usize> = clean
        .iter()
        .map(|&y| if rng.random::<f64>() < rate { (y + 1) % c } else { y })
        .collect();
    dataset.with_noisy_labels(&noisy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_gaussian_blobs;
    use proptest::prelude::*;

    fn flipped(d: &Dataset) -> usize {
        d.truth_mask().unwrap().count()
    }

    #[test]
    fn symmetric_extremes() {
        let d = make_gaussian_blobs(300, 3, 3, 2.0, 0).unwrap();
        assert_eq!(inject_symmetric_noise(&d, 0.0, 1).unwrap(), d);
        assert_eq!(flipped(&inject_symmetric_noise(&d, 1.0, 1).unwrap()), 300);
        assert!(inject_symmetric_noise(&d, 1.5, 1).is_err());
        assert!(inject_symmetric_noise(&d, -0.1, 1).is_err());
    }

    #[test]
    fn symmetric_rate_within_three_sigma() {
        // Binomial(1000, 0.4): mean 400, sd √240 ≈ 15.5, ±3σ → [352, 448]
        let d = make_gaussian_blobs(1000, 10, 10, 2.0, 0).unwrap();
        for seed in 0..20 {
            let k = flipped(&inject_symmetric_noise(&d, 0.4, seed).unwrap());
            assert!((352..=448).contains(&k), "seed {seed}: {k}");
        }
    }

    #[test]
    fn symmetric_targets_are_uniform_over_other_classes() {
        let d = make_gaussian_blobs(40_000, 4, 4, 1.0, 0).unwrap();
        let noisy = inject_symmetric_noise(&d, 1.0, 3).unwrap();
        let mut counts = [[0usize; 4]; 4];
        for ex in noisy.examples() {
            counts[ex.clean_label.unwrap()][ex.noisy_label] += 1;
        }
        for (y, row) in counts.iter().enumerate() {
            for (k, &n) in row.iter().enumerate() {
                if k != y {
                    let f = n as f64 / 10_000.0;
                    assert!((f - 1.0 / 3.0).abs() < 0.03, "{y}->{k}: {f}");
                }
            }
        }
    }

    #[test]
    fn pairflip_cycles() {
        let d = make_gaussian_blobs(100, 2, 2, 2.0, 0).unwrap();
        assert_eq!(inject_pairflip_noise(&d, 0.0, 1).unwrap(), d);
        let all = inject_pairflip_noise(&d, 1.0, 1).unwrap();
        for ex in all.examples() {
            assert_ne!(ex.noisy_label, ex.clean_label.unwrap());
        }
        let d = make_gaussian_blobs(500, 5, 5, 2.0, 0).unwrap();
        for ex in inject_pairflip_noise(&d, 0.3, 7).unwrap().examples() {
            let y = ex.clean_label.unwrap();
            assert!(ex.noisy_label == y || ex.noisy_label == (y + 1) % 5);
        }
    }

    #[test]
    fn requires_clean_labels() {
        let d = make_gaussian_blobs(10, 2, 2, 2.0, 0).unwrap();
        let mut ex = d.examples().to_vec();
        ex[0].clean_label = None;
        let d = Dataset::new(d.label_space(), vec![2], ex).unwrap();
        assert!(inject_symmetric_noise(&d, 0.1, 0).is_err());
        assert!(inject_pairflip_noise(&d, 0.1, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn injectors_touch_only_noisy_labels(rate in 0.0f64..=1.0, seed in any::<u64>(), pair in any::<bool>()) {
            let d = make_gaussian_blobs(60, 3, 3, 2.0, 9).unwrap();
            let out = if pair {
                inject_pairflip_noise(&d, rate, seed).unwrap()
            } else {
                inject_symmetric_noise(&d, rate, seed).unwrap()
            };
            for (a, b) in d.examples().iter().zip(out.examples()) {
                prop_assert_eq!(&a.features, &b.features);
                prop_assert_eq!(a.clean_label, b.clean_label);
                prop_assert_eq!(a.index, b.index);
            }
        }

        // Hoeffding: P(|k/n − rate| ≥ t) ≤ 2·exp(−2nt²); n = 2000, t = 0.05
        // gives ≤ 9e-5 per case.
        #[test]
        fn noise_fraction_concentrates(rate in 0.0f64..=1.0, seed in any::<u64>()) {
            let d = make_gaussian_blobs(2000, 5, 5, 2.0, 1).unwrap();
            let frac = flipped(&inject_symmetric_noise(&d, rate, seed).unwrap()) as f64 / 2000.0;
            prop_assert!((frac - rate).abs() < 0.05, "rate {} got {}", rate, frac);
        }
    }
}
