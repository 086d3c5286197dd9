use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::types::{Example, LabelSpace};

/// `n` points in `dim` dimensions; sample `i` belongs to class `i mod c`
/// and is drawn from a unit-covariance Gaussian centred at
/// `separation · e_class`. Noisy labels start equal to the clean ones.
pub fn make_gaussian_blobs(n: usize, c: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    let label_space = LabelSpace::new(c)?;
    if n < c {
        return Err(Error::invalid(format!("need n >= c, got n = {n}, c = {c}")));
    }
    if dim < c {
        return Err(Error::invalid(format!(
            "class means lie on the first {c} axes, so dim must be at least {c}, got {dim}"
        )));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!("separation must be positive, got {separation}")));
    }
    let mut rng = stream_rng(seed, Stream::Data, 0, 0);
    let examples = (0..n)
        .map(|i| {
            let class = i % c;
            let features = (0..dim)
                .map(|d| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let mean = if d == class { separation } else { 0.0 };
                    (mean + z) as f32
                })
                .collect();
            Example {
                index: i,
                features,
                noisy_label: class,
                clean_label: Some(class),
            }
        })
        .collect();
    Dataset::new(label_space, vec![dim], examples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_per_class() {
        let d = make_gaussian_blobs(3, 3, 3, 1.0, 0).unwrap();
        assert_eq!(d.clean_labels().unwrap(), vec![0, 1, 2]);
        assert_eq!(d.noisy_labels(), vec![0, 1, 2]);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_gaussian_blobs(50, 4, 6, 2.0, 11).unwrap();
        assert_eq!(a, make_gaussian_blobs(50, 4, 6, 2.0, 11).unwrap());
        assert_ne!(a, make_gaussian_blobs(50, 4, 6, 2.0, 12).unwrap());
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(make_gaussian_blobs(2, 3, 3, 1.0, 0).is_err());
        assert!(make_gaussian_blobs(3, 3, 2, 1.0, 0).is_err());
        assert!(make_gaussian_blobs(3, 3, 3, 0.0, 0).is_err());
        assert!(make_gaussian_blobs(3, 1, 3, 1.0, 0).is_err());
    }

    #[test]
    fn class_counts_are_balanced() {
        let d = make_gaussian_blobs(3001, 3, 3, 6.0, 1).unwrap();
        let mut counts = [0; 3];
        for y in d.clean_labels().unwrap() {
            counts[y] += 1;
        }
        assert_eq!(counts, [1001, 1000, 1000]);
    }

    #[test]
    fn wide_separation_is_linearly_separable() {
        // Oracle: fit a softmax-regression classifier by plain gradient
        // descent on the clean labels and check its training accuracy.
        let (n, c, dim) = (3000, 3, 8);
        let d = make_gaussian_blobs(n, c, dim, 6.0, 3).unwrap();
        let y = d.clean_labels().unwrap();
        let mut w = vec![vec![0.0f64; dim + 1]; c];
        for _ in 0..200 {
            let mut g = vec![vec![0.0f64; dim + 1]; c];
            for (ex, &yi) in d.examples().iter().zip(&y) {
                let x: Vec<f64> = ex.features.iter().map(|&v| v as f64).chain([1.0]).collect();
                let z: Vec<f64> = w.iter().map(|wk| wk.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                for k in 0..c {
                    let r = e[k] / s - (k == yi) as u8 as f64;
                    for (gj, xj) in g[k].iter_mut().zip(&x) {
                        *gj += r * xj / n as f64;
                    }
                }
            }
            for (wk, gk) in w.iter_mut().zip(&g) {
                for (a, b) in wk.iter_mut().zip(gk) {
                    *a -= 0.5 * b;
                }
            }
        }
        let correct = d
            .examples()
            .iter()
            .zip(&y)
            .filter(|(ex, &yi)| {
                let x: Vec<f64> = ex.features.iter().map(|&v| v as f64).chain([1.0]).collect();
                let z: Vec<f64> = w.iter().map(|wk| wk.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
                crate::types::argmax(&z) == yi
            })
            .count();
        assert!(
            correct as f64 / n as f64 > 0.99,
            "accuracy {}",
            correct as f64 / n as f64
        );
    }
}
