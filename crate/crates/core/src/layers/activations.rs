//! Pointwise nonlinearities.

use crate::tensor::Tensor;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Scaled hyperbolic tangent applied after the modality projection: `tanh(2x/3)`.
pub fn g(x: f64) -> f64 {
    (2.0 * x / 3.0).tanh()
}

/// Derivative of [`g`] expressed through its output `y = g(x)`.
pub fn g_grad_from_output(y: f64) -> f64 {
    (2.0 / 3.0) * (1.0 - y * y)
}

pub fn g_activation(x: &Tensor) -> Tensor {
    x.map(g)
}
