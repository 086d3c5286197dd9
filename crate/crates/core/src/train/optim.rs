use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::{Param, Tensor};

use super::config::TrainConfig;

/// Cosine annealing from `lr_init` to `eta_min` over `t_max` epochs, held at
/// `eta_min` afterwards.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    cosine(epoch, cfg.lr_init, cfg.schedule.eta_min, cfg.schedule.t_max)
}

pub(crate) fn cosine(epoch: usize, lr_init: f64, eta_min: f64, t_max: usize) -> f64 {
    let t = epoch.min(t_max) as f64 / t_max as f64;
    eta_min + (lr_init - eta_min) * (1.0 + (PI * t).cos()) / 2.0
}

/// SGD with momentum and L2 weight decay:
/// `g ← ∇ + wd·θ; b ← m·b + g; θ ← θ − lr·b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffers: Vec<Tensor>,
}

impl Sgd {
    pub fn new(params: &[&Param], momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64) -> Result<()> {
        if params.len() != self.buffers.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters, got {}",
                self.buffers.len(),
                params.len()
            )));
        }
        let (m, wd, lr) = (self.momentum as f32, self.weight_decay as f32, lr as f32);
        for (p, buf) in params.into_iter().zip(&mut self.buffers) {
            if buf.shape() != p.value.shape() {
                return Err(Error::shape("optimizer buffer shape changed"));
            }
            let grads = p.grad.data().to_vec();
            for ((v, g), b) in p.value.data_mut().iter_mut().zip(grads).zip(buf.data_mut()) {
                let g = g + wd * *v;
                *b = m * *b + g;
                *v -= lr * *b;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        let lr = |e| cosine(e, 0.04, 2e-4, 300);
        assert!((lr(0) - 0.04).abs() < 1e-15);
        assert!((lr(300) - 0.0002).abs() < 1e-15);
        assert!((lr(150) - 0.0201).abs() < 1e-12);
        assert_eq!(lr(320), lr(300));
    }

    #[test]
    fn cosine_non_increasing_and_bounded() {
        let mut prev = f64::INFINITY;
        for e in 0..400 {
            let v = cosine(e, 0.04, 2e-4, 300);
            assert!(v <= prev && (2e-4..=0.04).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn sgd_matches_hand_rollout() {
        let mut p = Param::new(Tensor::from_vec(&[1], vec![1.0]).unwrap());
        let mut opt = Sgd::new(&[&p], 0.9, 0.1);
        // step 1: g = 0.5 + 0.1·1 = 0.6, b = 0.6, θ = 1 − 0.1·0.6 = 0.94
        p.grad.data_mut()[0] = 0.5;
        opt.step(vec![&mut p], 0.1).unwrap();
        assert!((p.value.data()[0] - 0.94).abs() < 1e-6);
        // step 2: g = 0.5 + 0.094 = 0.594, b = 0.54 + 0.594 = 1.134, θ = 0.94 − 0.1134
        opt.step(vec![&mut p], 0.1).unwrap();
        assert!((p.value.data()[0] - 0.8266).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = Param::new(Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        p.grad.data_mut().copy_from_slice(&[3.0, 4.0]);
        let mut opt = Sgd::new(&[&p], 0.9, 5e-4);
        opt.step(vec![&mut p], 0.0).unwrap();
        assert_eq!(p.value.data(), &[1.0, -2.0]);
    }
}
