//! SGD with classical momentum.

use std::collections::BTreeMap;

use super::params::{Gradients, ParamStore};
use super::tensor::{Real, Tensor};

/// `v <- momentum * v + g; p <- p - lr * v`.
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Sgd { lr, momentum, velocity: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) {
        for ((path, p), (gpath, g)) in params.iter_mut().zip(grads.iter()) {
            assert_eq!(path, gpath, "params and grads misaligned: {path} vs {gpath}");
            assert_eq!(
                p.shape(),
                g.shape(),
                "gradient shape {:?} does not match parameter {path} {:?}",
                g.shape(),
                p.shape()
            );
            let v = self
                .velocity
                .entry(path.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for i in 0..p.numel() {
                let vi = self.momentum * v.data()[i] + g.data()[i];
                v.data_mut()[i] = vi;
                p.data_mut()[i] -= self.lr * vi;
            }
        }
    }

    /// Momentum buffers keyed by parameter path; empty until first step.
    pub fn velocity(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: BTreeMap<String, Tensor<T>>) {
        self.velocity = velocity;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::params::Binding;
    use crate::diffcore::tape::Tape;

    fn single_param(value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(value));
        s
    }

    /// Gradient of `value * p` w.r.t. `p`, which is exactly `value`.
    fn grad_of(store: &ParamStore<f64>, value: f64) -> Gradients<f64> {
        let tape = Tape::new();
        let mut binding = Binding::new(&tape, store);
        let v = binding.leaf("p");
        v.scale(value).sum().backward();
        binding.gradients()
    }

    #[test]
    fn plain_step() {
        // p = 1.0, g = 0.5, lr = 0.1, momentum = 0 -> p = 0.95
        let mut params = single_param(1.0);
        let grads = grad_of(&params, 0.5);
        let mut opt = Sgd::new(0.1, 0.0);
        opt.step(&mut params, &grads);
        assert!((params.get("p").item() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn momentum_recurrence_by_hand() {
        // momentum 0.9, same gradient twice: v2 = 0.95, p2 = 0.855
        let mut params = single_param(1.0);
        let grads = grad_of(&params, 0.5);
        let mut opt = Sgd::new(0.1, 0.9);
        opt.step(&mut params, &grads);
        opt.step(&mut params, &grads);
        assert!((opt.velocity().get("p").unwrap().item() - 0.95).abs() < 1e-12);
        assert!((params.get("p").item() - 0.855).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_zero_velocity_leaves_params() {
        let mut params = single_param(0.7);
        let grads = Gradients::zeros_like(&params);
        let mut opt = Sgd::new(0.1, 0.9);
        opt.step(&mut params, &grads);
        assert_eq!(params.get("p").item(), 0.7);
    }
}
