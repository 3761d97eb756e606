//! Batch normalization over the rows of a `[batch×features]` matrix.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta_shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

/// Values cached by a forward pass for the backward pass and running-stat update.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub mode: Mode,
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl BatchNormParams {
    pub fn new(features: usize) -> Self {
        BatchNormParams {
            gamma: Tensor::filled(&[features], 1.0),
            beta_shift: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::filled(&[features], 1.0),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Exponential moving average of the batch statistics in `cache`.
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.momentum;
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// Normalizes each column. Train mode uses (biased) batch statistics; eval
/// mode uses the running statistics. Running statistics are not touched here;
/// see [`BatchNormParams::update_running`].
pub fn batch_norm_forward(x: &Tensor, p: &BatchNormParams, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
    let (n, d) = (x.rows(), x.cols());
    if x.shape().len() != 2 || d != p.features() {
        return Err(Error::dim("batch_norm", &[n, p.features()], x.shape()));
    }
    let (mean, var) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::Config("batch norm in train mode needs a batch of at least 2".into()));
            }
            column_moments(x)
        }
        Mode::Eval => (p.running_mean.data().to_vec(), p.running_var.data().to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + p.eps).sqrt()).collect();
    let mut x_hat = Tensor::zeros(&[n, d]);
    let mut y = Tensor::zeros(&[n, d]);
    for r in 0..n {
        for c in 0..d {
            let xh = (x.at(r, c) - mean[c]) * inv_std[c];
            x_hat.set(r, c, xh);
            y.set(r, c, p.gamma.data()[c] * xh + p.beta_shift.data()[c]);
        }
    }
    let cache = BatchNormCache {
        mode,
        x_hat,
        inv_std,
        batch_mean: mean,
        batch_var: var,
    };
    Ok((y, cache))
}

/// Mean and biased variance per column. The mean is accumulated as an offset
/// from the first row so a constant column yields exactly zero deviation.
fn column_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let first = x.row(0);
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += x.at(r, c) - first[c];
        }
    }
    for (c, m) in mean.iter_mut().enumerate() {
        *m = first[c] + *m / n as f64;
    }
    let mut var = vec![0.0; d];
    for r in 0..n {
        for (c, v) in var.iter_mut().enumerate() {
            let dv = x.at(r, c) - mean[c];
            *v += dv * dv;
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);
    (mean, var)
}

/// Returns `dx` and accumulates `dgamma`, `dbeta` into the given buffers.
pub fn batch_norm_backward(
    dy: &Tensor,
    p: &BatchNormParams,
    cache: &BatchNormCache,
    dgamma: &mut Tensor,
    dbeta: &mut Tensor,
) -> Result<Tensor> {
    let (n, d) = (dy.rows(), dy.cols());
    if cache.x_hat.shape() != dy.shape() {
        return Err(Error::dim("batch_norm backward", cache.x_hat.shape(), dy.shape()));
    }
    let mut dx = Tensor::zeros(&[n, d]);
    for c in 0..d {
        let gamma = p.gamma.data()[c];
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for r in 0..n {
            sum_dy += dy.at(r, c);
            sum_dy_xh += dy.at(r, c) * cache.x_hat.at(r, c);
        }
        dgamma.data_mut()[c] += sum_dy_xh;
        dbeta.data_mut()[c] += sum_dy;
        let k = gamma * cache.inv_std[c];
        for r in 0..n {
            let v = match cache.mode {
                Mode::Train => {
                    k * (dy.at(r, c) - sum_dy / n as f64 - cache.x_hat.at(r, c) * sum_dy_xh / n as f64)
                }
                Mode::Eval => k * dy.at(r, c),
            };
            dx.set(r, c, v);
        }
    }
    Ok(dx)
}
