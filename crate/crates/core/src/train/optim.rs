//! SGD with classical momentum and global-norm gradient clipping.

use crate::model::FusionParams;

#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global L2 norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    velocity: Option<FusionParams>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, clip_norm: Option<f64>) -> Self {
        Sgd {
            learning_rate,
            momentum,
            clip_norm,
            velocity: None,
        }
    }

    /// `v ← μ·v + g`, `θ ← θ − lr·v`, with `g` rescaled first if its norm exceeds the cap.
    /// Returns the pre-clipping gradient norm.
    pub fn step(&mut self, params: &mut FusionParams, grads: &FusionParams) -> f64 {
        let norm = grads.grad_norm();
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let velocity = self.velocity.get_or_insert_with(|| grads.zeros_like());
        let g = grads.named_tensors();
        for ((theta, v), (_, g)) in params.tensors_mut().into_iter().zip(velocity.tensors_mut()).zip(g) {
            for ((t, v), g) in theta.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = self.momentum * *v + scale * g;
                *t -= self.learning_rate * *v;
            }
        }
        norm
    }
}
