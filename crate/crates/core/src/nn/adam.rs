use serde::{Deserialize, Serialize};

use super::mlp::MlpParams;
use crate::{Error, Result};

/// A container of trainable tensors visited in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

impl Parameters for Vec<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

impl Parameters for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers mirroring a [`Parameters`] layout.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam descent step: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<P: Parameters + ?Sized>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<()> {
    let grads = grads.tensors();
    let mut params = params.tensors_mut();
    let layout_ok = params.len() == grads.len()
        && params.len() == state.m.len()
        && params
            .iter()
            .zip(&grads)
            .zip(&state.m)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !layout_ok {
        return Err(Error::Shape("parameter, gradient and moment layouts differ".into()));
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(&grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = AdamConfig::default();
        assert_eq!((c.lr, c.beta1, c.beta2, c.epsilon), (5e-4, 0.9, 0.999, 1e-8));
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3, -1.2];
        let mut st = AdamState::new(&p, cfg(0.1));
        adam_step(&mut p, &vec![0.0, 0.0], &mut st).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(&p, cfg(0.1));
        adam_step(&mut p, &vec![1.0], &mut st).unwrap();
        // m_hat = v_hat = 1 -> step = 0.1 / (1 + 1e-8)
        assert!((p[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn two_steps_follow_scalar_reference() {
        // Reference trace evaluated by hand-unrolling the update for g = (1, -2):
        // t1: m=0.1, v=0.001, m_hat=1, v_hat=1 -> w=-0.1/(1+1e-8)
        // t2: m=0.09-0.2=-0.11, v=0.000999+0.004=0.004999,
        //     m_hat=-0.11/0.19, v_hat=0.004999/0.001999
        let lr = 0.1;
        let eps = 1e-8;
        let w1 = -lr / (1.0 + eps);
        let m_hat2 = -0.11 / (1.0 - 0.81);
        let v_hat2: f64 = 0.004999 / (1.0 - 0.998001);
        let w2 = w1 - lr * m_hat2 / (v_hat2.sqrt() + eps);

        let mut p = vec![0.0];
        let mut st = AdamState::new(&p, cfg(lr));
        adam_step(&mut p, &vec![1.0], &mut st).unwrap();
        assert!((p[0] - w1).abs() < 1e-15);
        adam_step(&mut p, &vec![-2.0], &mut st).unwrap();
        assert!((p[0] - w2).abs() < 1e-12, "{} vs {}", p[0], w2);
        assert_eq!(st.step(), 2);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut p = vec![0.0, 1.0];
        let mut st = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &vec![1.0], &mut st).is_err());
        assert_eq!(st.step(), 0);
    }
}
