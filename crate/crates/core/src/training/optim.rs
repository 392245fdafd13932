use serde::{Deserialize, Serialize};

use crate::params::ParamGroup;
use crate::tensor::Mat;

/// Adam moments for one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl Adam {
    pub fn new(group: &ParamGroup, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, step: 0, m: group.zeros_like(), v: group.zeros_like() }
    }

    pub fn apply(&mut self, group: &mut ParamGroup, grads: &[Mat]) {
        assert_eq!(grads.len(), group.len());
        if group.is_empty() {
            return;
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, grad) in grads.iter().enumerate() {
            let value = group.get_mut(idx);
            let (m, v) = (&mut self.m[idx].data, &mut self.v[idx].data);
            for (k, &g) in grad.data.iter().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let step = self.lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
                value.data[k] -= step;
            }
        }
    }
}

pub fn global_norm(grads: &[Mat]) -> f64 {
    grads.iter().map(Mat::sq_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` so their joint norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Mat], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(k);
        }
    }
    norm
}
