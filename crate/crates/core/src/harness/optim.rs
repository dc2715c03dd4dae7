use std::f64::consts::PI;

use crate::params::ParamStore;
use crate::tensor::Scalar;

/// Learning rate at `step` of `total`: `start` at step 0, `end` at step `total - 1`.
pub fn cosine_lr(start: f64, end: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return start;
    }
    let frac = step.min(total - 1) as f64 / (total - 1) as f64;
    end + 0.5 * (start - end) * (1.0 + (PI * frac).cos())
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ParamStore<T>,
    v: ParamStore<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// `params -= lr * m̂ / (sqrt(v̂) + eps)`; `grads` has the store's layout.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let c1 = T::c(1.0 / (1.0 - self.beta1.powi(self.t)));
        let c2 = T::c(1.0 / (1.0 - self.beta2.powi(self.t)));
        let (lr, eps) = (T::c(lr), T::c(self.eps));
        for i in 0..params.len() {
            let g = grads.tensor_at(i).data();
            let m = self.m.tensor_at_mut(i).data_mut();
            let v = self.v.tensor_at_mut(i).data_mut();
            let p = params.tensor_at_mut(i).data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                p[j] -= lr * (m[j] * c1) / ((v[j] * c2).sqrt() + eps);
            }
        }
    }
}
