//! Stochastic gradient descent with Nesterov momentum.

use super::TrainError;
use crate::model::Network;
use crate::nn::Scalar;

/// In-place Nesterov update: `v ← μv − lr·g; p ← p + μv − lr·g`.
pub fn nesterov_step<T: Scalar>(params: &mut [T], grads: &[T], velocity: &mut [T], lr: T, momentum: T) {
    assert!(params.len() == grads.len() && params.len() == velocity.len(), "optimizer shapes");
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let step = lr * g;
        *v = momentum * *v - step;
        *p = *p + momentum * *v - step;
    }
}

/// Velocity state for every trainable tensor of a network.
#[derive(Debug, Clone)]
pub struct Nesterov {
    pub momentum: f32,
    velocity: Vec<Vec<f32>>,
}

impl Nesterov {
    pub fn new(momentum: f32) -> Self {
        Self {
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Applies one update from the gradients accumulated in `net`.
    pub fn step(&mut self, net: &mut Network<f32>, lr: f32) -> Result<(), TrainError> {
        let mut params: Vec<_> = net.params_mut().into_iter().filter(|p| p.kind.trainable()).collect();
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        }
        for p in &params {
            if let Some(g) = p.tensor.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TrainError::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let (values, grads) = p.tensor.value_and_grad_mut();
            nesterov_step(values, grads, v, lr, self.momentum);
        }
        Ok(())
    }
}
