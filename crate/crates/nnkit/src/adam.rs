use crate::network::{Gradients, Network};
use crate::{NnError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NnError::Config(format!(
                "invalid Adam hyperparameters {self:?}"
            )))
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, net: &Network) -> Self {
        let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        Self {
            config,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let mut params = net.params_mut();
        self.step_slices(&mut params, grads)
    }

    /// Applies one update. A non-finite gradient entry refuses the whole
    /// step and leaves parameters, moments and `t` untouched.
    pub fn step_slices(&mut self, params: &mut [&mut [f64]], grads: &Gradients) -> Result<()> {
        if grads.tensors.len() != self.m.len() || params.len() != self.m.len() {
            return Err(NnError::GradientLayout(format!(
                "{} gradient tensors, {} parameter tensors, optimizer tracks {}",
                grads.tensors.len(),
                params.len(),
                self.m.len()
            )));
        }
        for (i, (g, m)) in grads.tensors.iter().zip(&self.m).enumerate() {
            if g.len() != m.len() || params[i].len() != m.len() {
                return Err(NnError::GradientLayout(format!(
                    "tensor {i} has wrong length"
                )));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient {
                    tensor: i,
                    index: j,
                });
            }
        }
        self.t += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{Dense, Layer};

    fn scalar_net(w: f64) -> Network {
        Network::from_layers(
            vec![1],
            vec![Layer::Dense(Dense::new(1, 1, vec![w], vec![0.0]))],
            0,
        )
        .unwrap()
    }

    fn grads(g: f64) -> Gradients {
        Gradients {
            tensors: vec![vec![g], vec![0.0]],
        }
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut net = scalar_net(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &net);
        adam.step(&mut net, &grads(0.0)).unwrap();
        assert_eq!(net.params()[0], &[1.0]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_is_about_lr_times_sign() {
        // m = 0.05, v = 2.5e-4; corrected m = 0.5, v = 0.25; step = lr*0.5/(0.5+eps).
        let mut net = scalar_net(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &net);
        adam.step(&mut net, &grads(0.5)).unwrap();
        let expected = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((net.params()[0][0] - expected).abs() < 1e-15);
        assert!((net.params()[0][0] - 0.999).abs() < 1e-8);
    }

    #[test]
    fn repeated_constant_gradient_does_not_grow_step() {
        let mut net = scalar_net(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &net);
        adam.step(&mut net, &grads(0.5)).unwrap();
        let w1 = net.params()[0][0];
        adam.step(&mut net, &grads(0.5)).unwrap();
        let w2 = net.params()[0][0];
        let s1 = (1.0 - w1).abs();
        let s2 = (w1 - w2).abs();
        assert!(s2 <= s1 * (1.0 + 1e-6), "{s1} {s2}");
    }

    #[test]
    fn non_finite_gradient_refused() {
        let mut net = scalar_net(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &net);
        let err = adam.step(&mut net, &grads(f64::INFINITY)).unwrap_err();
        assert!(matches!(
            err,
            NnError::NonFiniteGradient {
                tensor: 0,
                index: 0
            }
        ));
        assert_eq!(adam.steps(), 0);
        assert_eq!(net.params()[0], &[1.0]);
    }
}
