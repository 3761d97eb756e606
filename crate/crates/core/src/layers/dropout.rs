//! Inverted dropout.

use crate::error::{Error, Result};
use crate::layers::batchnorm::Mode;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Keeps each element with probability `1 - rate` and rescales survivors by
/// `1 / (1 - rate)`. Returns the output and the 0/1 keep mask. In eval mode
/// the input passes through with an all-ones mask and no randomness is drawn.
pub fn dropout_forward(x: &Tensor, rate: f64, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), Tensor::filled(x.shape(), 1.0)));
    }
    let keep = 1.0 - rate;
    let mut mask = Tensor::zeros(x.shape());
    for m in mask.data_mut() {
        if rng.bernoulli(keep) {
            *m = 1.0;
        }
    }
    let scale = 1.0 / keep;
    let out = x.mul(&mask)?.scale(scale);
    Ok((out, mask))
}

/// Gradient through dropout given the mask from the forward pass.
pub fn dropout_backward(dy: &Tensor, mask: &Tensor, rate: f64) -> Result<Tensor> {
    Ok(dy.mul(mask)?.scale(1.0 / (1.0 - rate)))
}
