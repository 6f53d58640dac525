//! Adam with bias-corrected moments and optional decoupled weight decay
//! (the decay the paper's optimizer applies; it defaults to 0 here).

use alloc::vec;
use alloc::vec::Vec;

use super::LearnError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig { lr, ..AdamConfig::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Optimizer state over a fixed set of parameter slots. All slots share one
/// step counter; moments are laid out exactly like the parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(slot_lens: &[usize], config: AdamConfig) -> AdamState {
        AdamState {
            config,
            step_count: 0,
            m: slot_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: slot_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update over every slot. Gradients must be finite: a non-finite
    /// gradient is a divergence signal and aborts the step untouched.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), LearnError> {
        assert_eq!(params.len(), self.m.len(), "slot count mismatch");
        assert_eq!(grads.len(), self.m.len(), "slot count mismatch");
        for (slot, grad) in grads.iter().enumerate() {
            assert_eq!(grad.len(), self.m[slot].len(), "slot {slot} length mismatch");
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(LearnError::NonFiniteGradient { slot });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        for (slot, param) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            let grad = grads[slot];
            for i in 0..param.len() {
                let g = grad[i];
                // Never-touched parameters are an exact no-op; skip the
                // moment math for them.
                if g == 0.0 && m[i] == 0.0 && v[i] == 0.0 && c.weight_decay == 0.0 {
                    continue;
                }
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let mut p = param[i];
                if c.weight_decay != 0.0 {
                    p -= c.lr * c.weight_decay * p;
                }
                param[i] = p - c.lr * m_hat / (crate::math::sqrt(v_hat) + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut adam = AdamState::new(&[3], AdamConfig::with_lr(0.1));
        let mut p = vec![1.0, -2.0, 0.5];
        let orig = p.clone();
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_magnitude_is_lr_regardless_of_grad_scale() {
        for &scale in &[1e-6, 1.0, 1e6] {
            let mut adam = AdamState::new(&[1], AdamConfig::with_lr(1e-3));
            let mut p = vec![0.0];
            adam.step(&mut [&mut p], &[&[scale]]).unwrap();
            // |Δ| = lr·|g|/(|g| + ε) ≈ lr, up to the ε dilution for the
            // smallest gradients.
            assert!((p[0].abs() - 1e-3).abs() < 2e-5, "scale {scale}: step {}", p[0]);
            assert!(p[0] < 0.0);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = [0.3, -0.7, 1.1];
        let mut adam = AdamState::new(&[3], AdamConfig::with_lr(1e-2));
        let mut p = vec![0.0; 3];
        for _ in 0..500 {
            let grad: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            adam.step(&mut [&mut p], &[&grad]).unwrap();
        }
        for (x, t) in p.iter().zip(&target) {
            assert!((x - t).abs() < 1e-4, "{x} vs {t}");
        }
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut adam = AdamState::new(&[2], AdamConfig::default());
        let mut p = vec![1.0, 2.0];
        let err = adam.step(&mut [&mut p], &[&[1.0, f64::NAN]]).unwrap_err();
        assert_eq!(err, LearnError::NonFiniteGradient { slot: 0 });
        assert_eq!(p, vec![1.0, 2.0]);
    }
}
