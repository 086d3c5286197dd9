use super::TwoHeadModel;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Exponential moving average of a model's parameters and buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub shadow: Vec<Tensor>,
    pub decay: f64,
    /// Number of updates applied so far.
    pub updates: u64,
}

impl EmaState {
    pub fn new(model: &TwoHeadModel, decay: f64) -> Result<Self> {
        Self::from_tensors(model.state().into_iter().cloned().collect(), decay)
    }

    pub fn from_tensors(shadow: Vec<Tensor>, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::config("ema.decay", format!("decay {decay} outside [0, 1]")));
        }
        Ok(Self {
            shadow,
            decay,
            updates: 0,
        })
    }

    /// Decay for the next update when ramping up: `min(decay, (1+n)/(10+n))`
    /// after `n` updates, so early averages are not dominated by the
    /// random initialisation.
    pub fn warmup_decay(&self) -> f64 {
        let n = self.updates as f64;
        self.decay.min((1.0 + n) / (10.0 + n))
    }

    /// `shadow ← decay·shadow + (1−decay)·current` with the configured decay.
    pub fn update(&mut self, current: &[&Tensor]) -> Result<()> {
        self.update_with_decay(current, self.decay)
    }

    pub fn update_with_decay(&mut self, current: &[&Tensor], decay: f64) -> Result<()> {
        if current.len() != self.shadow.len() {
            return Err(Error::shape(format!(
                "EMA tracks {} tensors, got {}",
                self.shadow.len(),
                current.len()
            )));
        }
        if let Some((s, c)) = self.shadow.iter().zip(current).find(|(s, c)| s.shape() != c.shape()) {
            return Err(Error::shape(format!(
                "EMA shadow shape {:?} does not match parameter shape {:?}",
                s.shape(),
                c.shape()
            )));
        }
        for (s, c) in self.shadow.iter_mut().zip(current) {
            for (sv, cv) in s.data_mut().iter_mut().zip(c.data()) {
                *sv = (decay * *sv as f64 + (1.0 - decay) * *cv as f64) as f32;
            }
        }
        self.updates += 1;
        Ok(())
    }

    /// A copy of `model` carrying the shadow parameters.
    pub fn averaged_model(&self, model: &TwoHeadModel) -> Result<TwoHeadModel> {
        let mut m = model.clone();
        m.load_state(&self.shadow)?;
        Ok(m)
    }
}

/// Functional form of [`EmaState::update`].
pub fn ema_update(mut ema: EmaState, params: &[&Tensor]) -> Result<EmaState> {
    ema.update(params)?;
    Ok(ema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(v: f32) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn decay_one_keeps_shadow() {
        let ema = EmaState::from_tensors(vec![scalar(0.25)], 1.0).unwrap();
        let ema = ema_update(ema, &[&scalar(9.0)]).unwrap();
        assert_eq!(ema.shadow[0].data(), &[0.25]);
    }

    #[test]
    fn decay_zero_copies_params() {
        let ema = EmaState::from_tensors(vec![scalar(0.25)], 0.0).unwrap();
        let ema = ema_update(ema, &[&scalar(9.0)]).unwrap();
        assert_eq!(ema.shadow[0].data(), &[9.0]);
    }

    #[test]
    fn single_step_recurrence() {
        let ema = EmaState::from_tensors(vec![scalar(0.0)], 0.999).unwrap();
        let ema = ema_update(ema, &[&scalar(1.0)]).unwrap();
        assert!((ema.shadow[0].data()[0] as f64 - 0.001).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut ema = EmaState::from_tensors(vec![scalar(0.0)], 0.5).unwrap();
        assert!(ema.update(&[&Tensor::zeros(&[2])]).is_err());
        assert!(ema.update(&[]).is_err());
        assert!(EmaState::from_tensors(vec![], 1.5).is_err());
    }

    #[test]
    fn warmup_decay_ramps_to_nominal() {
        let mut ema = EmaState::from_tensors(vec![scalar(0.0)], 0.999).unwrap();
        assert!((ema.warmup_decay() - 0.1).abs() < 1e-12);
        ema.updates = 1_000_000;
        assert_eq!(ema.warmup_decay(), 0.999);
    }

    proptest! {
        // With |shadow − params| ≤ range ≤ 1 initially, ⌈ln(1e-3·range)/ln(decay)⌉
        // steps suffice (and are a superset of the tight bound ln(1e-3/range)).
        #[test]
        fn converges_to_constant_params(
            start in prop::collection::vec(-0.5f32..0.5, 1..6),
            decay in 0.5f64..0.99,
        ) {
            let target: Vec<f32> = start.iter().map(|x| x + 0.5 * x.signum() + 0.1).collect();
            let range = start
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b).abs() as f64)
                .fold(0.0, f64::max)
                .clamp(1e-6, 1.0);
            let steps = ((1e-3 * range).ln() / decay.ln()).ceil() as usize;
            let p = Tensor::from_vec(&[start.len()], target.clone()).unwrap();
            let mut ema = EmaState::from_tensors(
                vec![Tensor::from_vec(&[start.len()], start.clone()).unwrap()],
                decay,
            ).unwrap();
            for _ in 0..steps {
                ema.update(&[&p]).unwrap();
            }
            let gap = ema.shadow[0]
                .data()
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            prop_assert!(gap < 1e-3, "gap {gap} after {steps} steps");
        }
    }
}
