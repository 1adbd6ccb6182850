use alloc::vec;
use alloc::vec::Vec;

use super::Mlp;
use crate::error::{config_err, Result};
use crate::math;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err!("adam learning rate must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(config_err!("adam {name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(config_err!("adam eps must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

/// First/second moment estimates for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
    config: AdamConfig,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { m: vec![0.0; n_params], v: vec![0.0; n_params], step_count: 0, config })
    }

    pub fn for_net(net: &Mlp, config: AdamConfig) -> Result<Self> {
        Self::new(net.params().len(), config)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Bias-corrected Adam step on `net`, then zeroes its gradients.
    pub fn update(&mut self, net: &mut Mlp) -> Result<()> {
        self.config.validate()?;
        let (params, grads) = net.grads_and_params_mut();
        if params.len() != self.m.len() {
            return Err(config_err!(
                "optimizer tracks {} parameters, network has {}",
                self.m.len(),
                params.len()
            ));
        }
        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step_count as f64;
        let c1 = 1.0 - math::powf(beta1, t);
        let c2 = 1.0 - math::powf(beta2, t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (math::sqrt(v_hat) + eps);
            grads[i] = 0.0;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Matrix};

    fn net_with_grad(g: &[f64]) -> Mlp {
        // [1 -> 1] identity net has exactly two parameters
        let mut net = Mlp::new(&[1, 1], Activation::Identity, Activation::Identity).unwrap();
        net.forward(&Matrix::column(&[g[0]])).unwrap();
        net.backprop(&Matrix::column(&[1.0])).unwrap();
        net
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut net = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity).unwrap();
        net.params_mut()[0] = 0.7;
        let before = net.params().to_vec();
        let mut adam = AdamState::for_net(&net, AdamConfig::default()).unwrap();
        adam.update(&mut net).unwrap();
        assert_eq!(net.params(), &before[..]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = net_with_grad(&[3.0]);
        assert_eq!(net.grads(), &[3.0, 1.0]);
        let mut adam = AdamState::for_net(&net, AdamConfig::with_lr(0.01)).unwrap();
        adam.update(&mut net).unwrap();
        for &p in net.params() {
            assert!((p + 0.01).abs() < 1e-9, "{p}");
        }
        assert!(net.grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut net = Mlp::new(&[1, 1], Activation::Identity, Activation::Identity).unwrap();
        let mut adam = AdamState::for_net(&net, AdamConfig::default()).unwrap();
        let mut trace = vec![net.params()[0]];
        for _ in 0..2 {
            net.forward(&Matrix::column(&[2.0])).unwrap();
            net.backprop(&Matrix::column(&[1.0])).unwrap();
            adam.update(&mut net).unwrap();
            trace.push(net.params()[0]);
        }
        assert!(trace[1] < trace[0] && trace[2] < trace[1]);
        // constant gradient => m_hat / sqrt(v_hat) = 1 on every step
        assert!((trace[2] + 2e-3).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        for cfg in [
            AdamConfig { lr: 0.0, ..Default::default() },
            AdamConfig { lr: -1.0, ..Default::default() },
            AdamConfig { beta1: 1.0, ..Default::default() },
            AdamConfig { beta2: 0.0, ..Default::default() },
        ] {
            assert!(AdamState::new(3, cfg).is_err());
        }
    }
}
