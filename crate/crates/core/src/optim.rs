//! Momentum SGD for the supernet weights and Adam for architecture logits
//! and retraining. Both use coupled (L2) weight decay and keep one state
//! buffer per parameter slot, created on the first step.

use crate::tensor::Tensor;

/// `g += wd·w; buf = μ·buf + g; w -= lr·buf`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffers: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, buffers: Vec::new() }
    }

    pub fn step<'a>(&mut self, lr: f64, slots: impl IntoIterator<Item = (&'a mut [f64], &'a [f64])>) {
        for (i, (w, g)) in slots.into_iter().enumerate() {
            if self.buffers.len() == i {
                self.buffers.push(vec![0.0; w.len()]);
            }
            let buf = &mut self.buffers[i];
            for ((w, &g), b) in w.iter_mut().zip(g).zip(buf.iter_mut()) {
                let g = g + self.weight_decay * *w;
                *b = self.momentum * *b + g;
                *w -= lr * *b;
            }
        }
    }

    pub fn step_tensors(&mut self, lr: f64, params: &mut [Tensor], grads: &[Tensor]) {
        self.step(lr, params.iter_mut().map(Tensor::data_mut).zip(grads.iter().map(Tensor::data)));
    }
}

/// Adam with bias correction and L2 weight decay folded into the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub step_count: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl Adam {
    pub const EPS: f64 = 1e-8;

    pub fn new(betas: (f64, f64), weight_decay: f64) -> Self {
        Adam { betas, eps: Self::EPS, weight_decay, step_count: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn step<'a>(&mut self, lr: f64, slots: impl IntoIterator<Item = (&'a mut [f64], &'a [f64])>) {
        self.step_count += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.step_count as i32);
        let c2 = 1.0 - b2.powi(self.step_count as i32);
        for (i, (w, g)) in slots.into_iter().enumerate() {
            if self.first.len() == i {
                self.first.push(vec![0.0; w.len()]);
                self.second.push(vec![0.0; w.len()]);
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, (w, &g)) in w.iter_mut().zip(g).enumerate() {
                let g = g + self.weight_decay * *w;
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }

    pub fn step_tensors(&mut self, lr: f64, params: &mut [Tensor], grads: &[Tensor]) {
        self.step(lr, params.iter_mut().map(Tensor::data_mut).zip(grads.iter().map(Tensor::data)));
    }
}
