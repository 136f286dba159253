//! Optimisers for training labeller networks (minimisation).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update at step `t >= 1`.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return Err(invalid("Adam step counter starts at 1"));
    }
    let d = params.len();
    if grad.len() != d || m.len() != d || v.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: grad.len().min(m.len()).min(v.len()),
            context: "Adam buffers",
        });
    }
    let bc1 = 1.0 - cfg.beta1.powi(t.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t.min(i32::MAX as u64) as i32);
    for i in 0..d {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

impl AdamState {
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &AdamConfig) -> Result<()> {
        self.t += 1;
        adam_step(params, grad, &mut self.m, &mut self.v, self.t, cfg)
    }
}

pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        st.step(&mut p, &[0.0, 0.0], &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(2);
        let g = [3.0, -0.01];
        let mut last = p.clone();
        for _ in 0..5000 {
            last.copy_from_slice(&p);
            st.step(&mut p, &g, &cfg).unwrap();
        }
        // bias-corrected ratio m_hat / sqrt(v_hat) is exactly sign(g) for constant g
        assert!(((p[0] - last[0]) + cfg.lr).abs() < 1e-9);
        assert!(((p[1] - last[1]) - cfg.lr).abs() < 1e-6);
    }

    #[test]
    fn deterministic_and_rejects_step_zero() {
        let run = || {
            let mut p = vec![0.5; 3];
            let mut st = AdamState::new(3);
            for k in 0..10 {
                st.step(&mut p, &[0.1 * k as f64, -1.0, 2.0], &AdamConfig::default())
                    .unwrap();
            }
            p
        };
        assert_eq!(run(), run());
        let mut p = vec![0.0];
        assert!(adam_step(&mut p, &[1.0], &mut [0.0], &mut [0.0], 0, &AdamConfig::default()).is_err());
    }

    #[test]
    fn sgd_descends() {
        let mut p = vec![1.0];
        sgd_step(&mut p, &[2.0], 0.25);
        assert_eq!(p, vec![0.5]);
    }
}
