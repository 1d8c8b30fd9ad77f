//! Adam with bias correction, over the canonical parameter list.

use crate::error::{Error, Result};
use crate::net::NetworkParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter tensor, plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let shapes: Vec<Vec<usize>> = params
            .named()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        AdamState {
            m: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            step: 0,
        }
    }

    /// One update over all parameters. Gradients must align with the
    /// canonical `NetworkParams::named` order.
    pub fn step(
        &mut self,
        params: &mut NetworkParams,
        grads: &[Tensor],
        lr: f64,
        config: AdamConfig,
    ) -> Result<()> {
        let mut named = params.named_mut();
        assert_eq!(named.len(), grads.len(), "gradient list mismatch");
        for ((name, _), g) in named.iter().zip(grads) {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient { name: name.clone() });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - config.beta1.powi(t);
        let bc2 = 1.0 - config.beta2.powi(t);
        for (pi, (_, tensor)) in named.iter_mut().enumerate() {
            let m = self.m[pi].data_mut();
            let v = self.v[pi].data_mut();
            let g = grads[pi].data();
            let p = tensor.data_mut();
            for i in 0..p.len() {
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
            }
        }
        Ok(())
    }
}
