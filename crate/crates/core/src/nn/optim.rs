use serde::{Deserialize, Serialize};

use super::Module;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// Adam with bias correction. Moment buffers follow the model's parameter
/// traversal order and are created on the first step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<M: Module>(&mut self, model: &mut M, grad: &M) {
        let grads = grad.params();
        let params = model.params_mut();
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.data.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (k, (p, g)) in params.into_iter().zip(&grads).enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                p.data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::nn::{BatchNorm, Linear};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut lin = Linear::zeros(2, 1);
        let mut g = Linear::zeros(2, 1);
        g.weight = array![[3.0, -0.5]];
        let mut opt = Adam::new(AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        opt.step(&mut lin, &g);
        assert!((lin.weight[[0, 0]] + 0.1).abs() < 1e-6);
        assert!((lin.weight[[0, 1]] - 0.1).abs() < 1e-6);
        assert_eq!(lin.bias[0], 0.0);
    }

    #[test]
    fn running_stats_are_left_alone() {
        let mut bn = BatchNorm::new(2);
        let mut g = bn.zeros_like();
        for p in g.params_mut() {
            p.data.fill(1.0);
        }
        Adam::new(AdamConfig::default()).step(&mut bn, &g);
        assert_eq!(bn.running_var.to_vec(), vec![1.0, 1.0]);
        assert!(bn.gamma[0] < 1.0);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut lin = Linear::zeros(2, 2);
        lin.weight.fill(0.3);
        let before = lin.clone();
        let mut g = lin.zeros_like();
        g.weight.fill(1.0);
        let mut opt = Adam::new(AdamConfig {
            lr: 0.0,
            ..Default::default()
        });
        opt.step(&mut lin, &g);
        assert_eq!(lin, before);
    }
}
