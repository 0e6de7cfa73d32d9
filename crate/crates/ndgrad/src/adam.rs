//! Adam with bias-corrected first and second moments.

use crate::error::NdError;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for a fixed list of parameter tensors. Moment slots are
/// allocated on the first step and keyed by position, so the caller must pass
/// parameters in the same order every step.
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<(), NdError> {
        if params.len() != grads.len() {
            return Err(NdError::invalid(
                "adam",
                format!("{} params but {} gradients", params.len(), grads.len()),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        if self.m.len() != params.len() {
            return Err(NdError::invalid(
                "adam",
                format!("state holds {} slots but got {} params", self.m.len(), params.len()),
            ));
        }
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() {
                return Err(NdError::shape("adam", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(NdError::NonFinite {
                    context: "adam gradient".into(),
                });
            }
            for i in 0..p.numel() {
                let gi = g.data()[i];
                let mi = c.beta1 * m.data()[i] + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v.data()[i] + (1.0 - c.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                p.data_mut()[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// With bias correction the first update reduces to
    /// `-lr * g / (|g| + eps)`, which is `-lr * sign(g)` away from zero.
    #[test]
    fn first_step_is_signed_learning_rate() {
        let mut p = Tensor::from_vec(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let g = Tensor::from_vec(&[4], vec![0.3, -1.2, 2.0, -0.01]).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p], &[&g]).unwrap();
        for i in 0..4 {
            let expect = before.data()[i] - 1e-4 * g.data()[i].signum();
            assert!(
                (p.data()[i] - expect).abs() < 1e-6,
                "coord {i}: {} vs {}",
                p.data()[i],
                expect
            );
        }
    }

    #[test]
    fn zero_gradient_from_fresh_state_changes_nothing() {
        let mut p = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::zeros(&[3]);
        let g = Tensor::zeros(&[4]);
        let mut adam = Adam::new(AdamConfig::default());
        assert!(adam.step(&mut [&mut p], &[&g]).is_err());
    }
}
