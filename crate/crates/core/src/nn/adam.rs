//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad Adam settings: {self:?}")))
        }
    }
}

/// Moment accumulators for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// State for tensors of the given lengths.
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i] == None` leaves tensor `i` and its moments untouched.
    ///
    /// θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape {
                context: "adam_step",
                left: (params.len(), grads.len()),
                right: (self.first.len(), 1),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let expected = self.first[i].len();
            if p.len() != expected || g.is_some_and(|g| g.len() != expected) {
                return Err(Error::Shape {
                    context: "adam_step tensor",
                    left: (p.len(), g.map_or(expected, |g| g.len())),
                    right: (expected, 1),
                });
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let decay = lr * weight_decay * p[j];
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps) + decay;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_fixed_point() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.0; 3];
        for _ in 0..5 {
            state.step(&mut [p.as_mut_slice()], &[Some(g.as_slice())]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, &[1]);
        let mut p = vec![0.0];
        state.step(&mut [p.as_mut_slice()], &[Some(&[1.0][..])]).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = -lr / (1 + ε)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "{}", p[0]);
    }

    #[test]
    fn identical_tensors_identical_updates() {
        let mut state = AdamState::new(AdamConfig::default(), &[4, 4]);
        let mut a = vec![0.3, -0.1, 0.2, 0.9];
        let mut b = a.clone();
        let g = vec![0.5, -1.0, 2.0, 0.0];
        for _ in 0..3 {
            state
                .step(&mut [a.as_mut_slice(), b.as_mut_slice()], &[Some(&g), Some(&g)])
                .unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn decoupled_decay_shrinks_params() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, &[1]);
        let mut p = vec![2.0];
        state.step(&mut [p.as_mut_slice()], &[Some(&[0.0][..])]).unwrap();
        assert!((p[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn skipped_tensor_untouched() {
        let mut state = AdamState::new(AdamConfig::default(), &[2, 2]);
        let mut a = vec![1.0, 1.0];
        let mut b = vec![1.0, 1.0];
        state
            .step(&mut [a.as_mut_slice(), b.as_mut_slice()], &[Some(&[1.0, 1.0]), None])
            .unwrap();
        assert_ne!(a, vec![1.0, 1.0]);
        assert_eq!(b, vec![1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut state = AdamState::new(AdamConfig::default(), &[2]);
        let mut p = vec![0.0; 3];
        assert!(state.step(&mut [p.as_mut_slice()], &[Some(&[0.0; 3][..])]).is_err());
    }
}
