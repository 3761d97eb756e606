//! Affine map applied row-wise to a batch.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemv_acc, gemv_t_acc, outer_acc, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out×in]`
    pub weight: Tensor,
    /// `[out]`; `None` for layers whose output is batch-normalized.
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn init_uniform(input: usize, output: usize, with_bias: bool, rng: &mut Rng) -> Self {
        let s = 1.0 / (input as f64).sqrt();
        let data = (0..input * output).map(|_| rng.uniform_range(-s, s)).collect();
        Linear {
            weight: Tensor::matrix(output, input, data).unwrap(),
            bias: with_bias.then(|| Tensor::zeros(&[output])),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            weight: Tensor::zeros_like(&self.weight),
            bias: self.bias.as_ref().map(Tensor::zeros_like),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `x: [batch×in]` → `[batch×out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim("linear", self.weight.shape(), x.shape()));
        }
        let out_dim = self.output_dim();
        let mut out = Tensor::zeros(&[x.rows(), out_dim]);
        for r in 0..x.rows() {
            let o = out.row_mut(r);
            if let Some(b) = &self.bias {
                o.copy_from_slice(b.data());
            }
            gemv_acc(&self.weight, x.row(r), o);
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and returns `dx`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grads: &mut Linear) -> Result<Tensor> {
        if dy.rows() != x.rows() || dy.cols() != self.output_dim() {
            return Err(Error::dim("linear backward", &[x.rows(), self.output_dim()], dy.shape()));
        }
        let mut dx = Tensor::zeros(&[x.rows(), self.input_dim()]);
        for r in 0..x.rows() {
            outer_acc(&mut grads.weight, dy.row(r), x.row(r));
            if let Some(gb) = &mut grads.bias {
                gb.data_mut().iter_mut().zip(dy.row(r)).for_each(|(a, b)| *a += b);
            }
            gemv_t_acc(&self.weight, dy.row(r), dx.row_mut(r));
        }
        Ok(dx)
    }
}
