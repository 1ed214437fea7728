use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments, one moment buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub learning_rate: T,
    beta1: T,
    beta2: T,
    epsilon: T,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Allocates zeroed moments for tensors of the given lengths.
    pub fn new(learning_rate: T, config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            learning_rate,
            beta1: T::of(config.beta1),
            beta2: T::of(config.beta2),
            epsilon: T::of(config.epsilon),
            step: 0,
            first: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.first, &self.second)
    }

    /// Restores a saved state; moment lengths must match the allocated buffers.
    pub fn restore(&mut self, step: u64, first: Vec<Vec<T>>, second: Vec<Vec<T>>) -> Result<(), ModelError> {
        let lens = |v: &[Vec<T>]| v.iter().map(Vec::len).collect::<Vec<_>>();
        if lens(&first) != lens(&self.first) || lens(&second) != lens(&self.second) {
            return Err(ModelError::Config("optimizer moment sizes do not match the model".into()));
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }

    /// Applies one update from each tensor's gradient accumulator. Nothing is
    /// modified if any gradient is non-finite.
    pub fn update(&mut self, params: &mut [&mut Tensor<T>]) -> Result<(), ModelError> {
        if params.len() != self.first.len() {
            return Err(ModelError::Config(format!(
                "optimizer holds {} moment buffers, got {} tensors",
                self.first.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            let grad = p.grad().ok_or_else(|| ModelError::Config(format!("tensor {i} is not tracked")))?;
            if grad.len() != self.first[i].len() {
                return Err(ModelError::Config(format!("tensor {i} changed size")));
            }
            if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
                return Err(ModelError::NonFiniteGradient { tensor: i, index: j });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad().expect("checked").to_vec();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((w, g), m), v) in p.values_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (T::one() - self.beta1) * *g;
                *v = self.beta2 * *v + (T::one() - self.beta2) * *g * *g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64, g: f64) -> Tensor<f64> {
        let mut t = Tensor::scalar(v);
        t.accumulate_grad(&[g]);
        t
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = Adam::new(0.1, AdamConfig::default(), &[1]);
        let mut p = scalar_param(2.0, 0.0);
        opt.update(&mut [&mut p]).unwrap();
        assert_eq!(p.values(), &[2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [0.37, -12.0] {
            let mut opt = Adam::new(0.01, AdamConfig::default(), &[1]);
            let mut p = scalar_param(1.0, g);
            opt.update(&mut [&mut p]).unwrap();
            let delta = p.values()[0] - 1.0;
            assert!((delta + 0.01 * f64::signum(g)).abs() < 1e-8, "{delta}");
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_change() {
        let mut opt = Adam::new(0.01, AdamConfig::default(), &[1, 1]);
        let mut a = scalar_param(1.0, 1.0);
        let mut b = scalar_param(1.0, f64::NAN);
        let err = opt.update(&mut [&mut a, &mut b]).unwrap_err();
        assert!(matches!(err, ModelError::NonFiniteGradient { tensor: 1, index: 0 }));
        assert_eq!(a.values(), &[1.0]);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn quadratic_converges_like_scalar_recurrence() {
        // Independent scalar recurrence for (w - 3)^2.
        let (b1, b2, eps, lr) = (0.9_f64, 0.999_f64, 1e-8, 0.1);
        let (mut w_ref, mut m, mut v) = (0.0_f64, 0.0, 0.0);
        for t in 1..=100 {
            let g = 2.0 * (w_ref - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w_ref -= lr * mh / (vh.sqrt() + eps);
        }

        let mut opt = Adam::new(0.1, AdamConfig::default(), &[1]);
        let mut w = Tensor::scalar(0.0_f64);
        for _ in 0..100 {
            let g = 2.0 * (w.values()[0] - 3.0);
            w.track();
            w.zero_grad();
            w.accumulate_grad(&[g]);
            opt.update(&mut [&mut w]).unwrap();
        }
        assert!((w.values()[0] - w_ref).abs() < 1e-12);
        assert!((w.values()[0] - 3.0).abs() < 0.05);
    }
}
