use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};
use crate::types::Example;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Vector inputs: jitter standard deviation as a fraction of each
    /// feature's dataset standard deviation.
    pub jitter: f64,
    /// Image inputs: zero padding before a random crop back to size.
    pub crop_padding: usize,
    /// Image inputs: flip horizontally with probability 1/2.
    pub hflip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jitter: 0.1,
            crop_padding: 4,
            hflip: true,
        }
    }
}

fn jitter<R: Rng>(x: &[f32], std: &[f32], scale: f64, rng: &mut R) -> Vec<f32> {
    x.iter()
        .zip(std)
        .map(|(&v, &s)| {
            let z: f64 = StandardNormal.sample(rng);
            (v as f64 + scale * s as f64 * z) as f32
        })
        .collect()
}

fn crop_flip<R: Rng>(x: &[f32], shape: &[usize], pad: usize, hflip: bool, rng: &mut R) -> Vec<f32> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
    let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
    let flip = hflip && rng.random::<bool>();
    let mut out = vec![0.0f32; x.len()];
    for ch in 0..c {
        for i in 0..h {
            let si = i as isize + dy;
            if si < 0 || si >= h as isize {
                continue;
            }
            for j in 0..w {
                let jj = if flip { w - 1 - j } else { j };
                let sj = jj as isize + dx;
                if sj < 0 || sj >= w as isize {
                    continue;
                }
                out[(ch * h + i) * w + j] = x[(ch * h + si as usize) * w + sj as usize];
            }
        }
    }
    out
}

/// Two independently augmented views of one example. Vector inputs get
/// Gaussian jitter; `[C, H, W]` inputs get random crop and flip. The pair
/// depends only on `(example.index, epoch, seed)`.
pub fn two_view_augment(
    example: &Example,
    feature_shape: &[usize],
    feature_std: &[f32],
    epoch: u64,
    seed: u64,
    cfg: &AugmentConfig,
) -> (Vec<f32>, Vec<f32>) {
    let mut rng = stream_rng(seed, Stream::Augment, example.index as u64, epoch);
    let x = &example.features;
    if feature_shape.len() == 3 {
        let a = crop_flip(x, feature_shape, cfg.crop_padding, cfg.hflip, &mut rng);
        let b = crop_flip(x, feature_shape, cfg.crop_padding, cfg.hflip, &mut rng);
        (a, b)
    } else if cfg.jitter == 0.0 {
        (x.clone(), x.clone())
    } else {
        let a = jitter(x, feature_std, cfg.jitter, &mut rng);
        let b = jitter(x, feature_std, cfg.jitter, &mut rng);
        (a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(index: usize, features: Vec<f32>) -> Example {
        Example {
            index,
            features,
            noisy_label: 0,
            clean_label: None,
        }
    }

    #[test]
    fn zero_jitter_is_identity() {
        let ex = example(3, vec![1.0, -2.0, 0.5]);
        let cfg = AugmentConfig {
            jitter: 0.0,
            ..Default::default()
        };
        let (a, b) = two_view_augment(&ex, &[3], &[1.0; 3], 0, 1, &cfg);
        assert_eq!(a, ex.features);
        assert_eq!(b, ex.features);
    }

    #[test]
    fn no_crop_no_flip_is_identity_on_images() {
        let ex = example(0, (0..2 * 3 * 4).map(|v| v as f32).collect());
        let cfg = AugmentConfig {
            crop_padding: 0,
            hflip: false,
            ..Default::default()
        };
        let (a, b) = two_view_augment(&ex, &[2, 3, 4], &[], 5, 1, &cfg);
        assert_eq!((a.clone(), b), (ex.features.clone(), ex.features.clone()));
    }

    #[test]
    fn deterministic_per_index_epoch_seed() {
        let ex = example(7, vec![0.0; 5]);
        let cfg = AugmentConfig::default();
        let s = [1.0; 5];
        let v = two_view_augment(&ex, &[5], &s, 2, 9, &cfg);
        assert_eq!(v, two_view_augment(&ex, &[5], &s, 2, 9, &cfg));
        assert_ne!(v.0, v.1);
        assert_ne!(v, two_view_augment(&ex, &[5], &s, 3, 9, &cfg));
        assert_ne!(v, two_view_augment(&example(8, vec![0.0; 5]), &[5], &s, 2, 9, &cfg));
    }

    #[test]
    fn jitter_scale_tracks_feature_std() {
        // Over 10⁴ draws the empirical sd of (view − x) should be 0.1·std
        // up to ±0.005·std.
        let std = [1.0f32, 3.0, 0.5];
        let cfg = AugmentConfig::default();
        let mut sq = [0.0f64; 3];
        let mut sum = [0.0f64; 3];
        let draws = 10_000;
        for i in 0..draws / 2 {
            let ex = example(i, vec![2.0, -1.0, 0.0]);
            let (a, b) = two_view_augment(&ex, &[3], &std, 0, 4, &cfg);
            for v in [a, b] {
                for k in 0..3 {
                    let d = (v[k] - ex.features[k]) as f64;
                    sum[k] += d;
                    sq[k] += d * d;
                }
            }
        }
        for k in 0..3 {
            let mean = sum[k] / draws as f64;
            let sd = (sq[k] / draws as f64 - mean * mean).sqrt() / std[k] as f64;
            assert!((sd - 0.1).abs() < 0.005, "feature {k}: {sd}");
        }
    }

    #[test]
    fn crop_shifts_and_flips_content() {
        let shape = [1, 4, 4];
        let ex = example(0, (0..16).map(|v| v as f32 + 1.0).collect());
        let cfg = AugmentConfig {
            crop_padding: 1,
            hflip: true,
            jitter: 0.0,
        };
        let mut seen_flip = false;
        for seed in 0..50 {
            let (a, _) = two_view_augment(&ex, &shape, &[], 0, seed, &cfg);
            // every nonzero output pixel comes from the input
            assert!(a.iter().all(|v| *v == 0.0 || ex.features.contains(v)));
            if a[0] == 4.0 || a[4] == 8.0 {
                seen_flip = true;
            }
        }
        assert!(seen_flip);
    }
}
