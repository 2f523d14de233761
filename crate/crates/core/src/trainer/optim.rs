//! Adaptive-moment optimizer with decoupled weight decay.

use crate::numerics::Tensor;

pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    /// Zero all moments; used when the pseudo-label semantics jump at a
    /// cluster halving.
    pub fn reset(&mut self) {
        self.step_count = 0;
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            for x in t.data_mut() {
                *x = 0.0;
            }
        }
    }

    /// One update over parameters aligned with the constructor's shapes.
    /// `grads[i] = None` means zero gradient for that parameter.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len());
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let p = params[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for e in 0..p.len() {
                let g = grads[i].map(|g| g.data()[e]).unwrap_or(0.0);
                m[e] = self.beta1 * m[e] + (1.0 - self.beta1) * g;
                v[e] = self.beta2 * v[e] + (1.0 - self.beta2) * g * g;
                let mhat = m[e] / bc1;
                let vhat = v[e] / bc2;
                p[e] -= self.learning_rate * (mhat / (vhat.sqrt() + self.eps))
                    + self.learning_rate * self.weight_decay * p[e];
            }
        }
    }
}
