use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for a list of parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl AdamState {
    pub fn new(shapes: &[usize], config: AdamConfig) -> Self {
        Self {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_params(params: &[&mut [f32]], config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(&shapes, config)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update. Non-finite gradients are rejected
    /// before anything is modified.
    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[&[f32]], lr: f32) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                context: "adam parameter groups",
                expected: self.m.len(),
                found: params.len().min(grads.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::ShapeMismatch {
                    context: "adam parameter group",
                    expected: m.len(),
                    found: if p.len() != m.len() { p.len() } else { g.len() },
                });
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gradients"));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - powi_f64(beta1, self.t);
        let bc2 = 1.0 - powi_f64(beta2, self.t);
        let step = lr / bc1;
        let inv_bc2 = 1.0 / bc2;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                p[i] -= step * m[i] / (math::sqrt(v[i] * inv_bc2) + eps);
            }
        }
        Ok(())
    }
}

fn powi_f64(base: f32, exp: u64) -> f32 {
    num_traits::Float::powf(base as f64, exp as f64) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = vec![1.0f32, -2.0, 3.0];
        let mut st = AdamState::new(&[3], AdamConfig::default());
        st.step(&mut [&mut p], &[&[0.0; 3]], 0.01).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so Δθ = -lr · g / (|g| + ε)
        let mut p = vec![0.5f32];
        let mut st = AdamState::new(&[1], AdamConfig::default());
        st.step(&mut [&mut p], &[&[1.0]], 0.01).unwrap();
        let expected = 0.5 - 0.01 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-7);
    }

    #[test]
    fn elementwise_updates() {
        let mut p = vec![0.0f32, 5.0];
        let mut st = AdamState::new(&[2], AdamConfig::default());
        for _ in 0..3 {
            st.step(&mut [&mut p], &[&[0.3, 0.3]], 0.05).unwrap();
        }
        assert!(((p[0] - 0.0) - (p[1] - 5.0)).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let mut p = vec![0.1f32, 0.2];
        let mut st = AdamState::new(&[2], AdamConfig::default());
        st.step(&mut [&mut p], &[&[4.0, -1.0]], 0.0).unwrap();
        assert_eq!(p, vec![0.1, 0.2]);
    }

    #[test]
    fn non_finite_gradients_are_errors() {
        let mut p = vec![0.1f32];
        let mut st = AdamState::new(&[1], AdamConfig::default());
        assert_eq!(
            st.step(&mut [&mut p], &[&[f32::NAN]], 0.1),
            Err(Error::NonFinite("gradients"))
        );
        assert_eq!(st.steps(), 0);
        assert_eq!(p, vec![0.1]);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.1f32; 2];
        let mut st = AdamState::new(&[3], AdamConfig::default());
        assert!(st.step(&mut [&mut p], &[&[0.0; 2]], 0.1).is_err());
    }
}
