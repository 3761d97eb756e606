//! PCA whitening via covariance eigendecomposition, plus plain centering.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_PCA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// `[d]`
    pub mean: Tensor,
    /// `[k×d]`, orthonormal rows ordered by decreasing eigenvalue.
    pub components: Tensor,
    /// `[k]`, non-increasing.
    pub eigenvalues: Tensor,
    pub eps: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Whitens each row: `diag(1/√(λ+eps)) · C · (x − mean)`.
    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.input_dim();
        if x.shape().len() != 2 || x.cols() != d {
            return Err(Error::dim("pca transform", &[x.rows(), d], x.shape()));
        }
        let k = self.output_dim();
        let scale: Vec<f64> = self
            .eigenvalues
            .data()
            .iter()
            .map(|l| 1.0 / (l + self.eps).sqrt())
            .collect();
        let mut out = Tensor::zeros(&[x.rows(), k]);
        let mut centered = vec![0.0; d];
        for r in 0..x.rows() {
            for ((c, &v), &m) in centered.iter_mut().zip(x.row(r)).zip(self.mean.data()) {
                *c = v - m;
            }
            for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                let comp = self.components.row(j);
                *o = scale[j] * comp.iter().zip(&centered).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(out)
    }
}

/// Per-column mean of `[n×d]`.
pub fn column_mean(x: &Tensor) -> Vec<f64> {
    let mut mean = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    let n = x.rows().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Fits a whitening transform keeping the top `k` components.
/// Covariance uses the unbiased `1/(n−1)` normalization.
pub fn pca_whiten_fit(x: &Tensor, k: usize) -> Result<PcaModel> {
    pca_whiten_fit_eps(x, k, DEFAULT_PCA_EPS)
}

pub fn pca_whiten_fit_eps(x: &Tensor, k: usize, eps: f64) -> Result<PcaModel> {
    let (n, d) = (x.rows(), x.cols());
    if x.shape().len() != 2 || n < 2 {
        return Err(Error::Config(format!("pca needs at least 2 rows, got shape {:?}", x.shape())));
    }
    if k == 0 || k > d || k > n - 1 {
        return Err(Error::Config(format!(
            "pca asked for {k} components from {n} rows of dimension {d} (max {})",
            d.min(n - 1)
        )));
    }
    let mean = column_mean(x);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut c = vec![0.0; d];
    for r in 0..n {
        for ((ci, &v), &m) in c.iter_mut().zip(x.row(r)).zip(&mean) {
            *ci = v - m;
        }
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-10 * d as f64;
    let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
    if k > rank {
        return Err(Error::Config(format!(
            "pca asked for {k} components but the data has effective rank {rank}"
        )));
    }

    let mut components = Tensor::zeros(&[k, d]);
    let mut eigenvalues = Vec::with_capacity(k);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(idx);
        // Sign convention: largest-magnitude entry positive.
        let pivot = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (j, o) in components.row_mut(row).iter_mut().enumerate() {
            *o = sign * v[j];
        }
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaModel {
        mean: Tensor::vector(mean),
        components,
        eigenvalues: Tensor::vector(eigenvalues),
        eps,
    })
}

/// Subtracts the per-column mean; returns the centered data and the mean.
pub fn center(x: &Tensor) -> Result<(Tensor, Tensor)> {
    if x.rows() == 0 {
        return Err(Error::Config("cannot center an empty matrix".into()));
    }
    let mean = column_mean(x);
    Ok((apply_center(x, &mean), Tensor::vector(mean)))
}

pub fn apply_center(x: &Tensor, mean: &[f64]) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (v, m) in out.row_mut(r).iter_mut().zip(mean) {
            *v -= m;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample_cov(y: &Tensor) -> Vec<Vec<f64>> {
        let (n, k) = (y.rows(), y.cols());
        let m = column_mean(y);
        let mut c = vec![vec![0.0; k]; k];
        for r in 0..n {
            for i in 0..k {
                for j in 0..k {
                    c[i][j] += (y.at(r, i) - m[i]) * (y.at(r, j) - m[j]);
                }
            }
        }
        c.iter_mut().flatten().for_each(|v| *v /= (n - 1) as f64);
        c
    }

    #[test]
    fn scalar_whitening() {
        let mut rng = Rng::new(1);
        let x = Tensor::matrix(500, 1, (0..500).map(|_| 2.0 * rng.normal()).collect()).unwrap();
        let p = pca_whiten_fit(&x, 1).unwrap();
        let y = p.transform(&x).unwrap();
        assert!((sample_cov(&y)[0][0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn correlated_gaussian_whitens() {
        let mut rng = Rng::new(2);
        let n = 10_000;
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let (a, b) = (rng.normal(), rng.normal());
            data.push(2.0 * a + 1.0);
            data.push(0.8 * a + 0.5 * b - 3.0);
        }
        let x = Tensor::matrix(n, 2, data).unwrap();
        let p = pca_whiten_fit(&x, 2).unwrap();
        let gram = crate::tensor::matmul(&p.components, &p.components.transpose().unwrap()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((gram.at(i, j) - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        assert!(p.eigenvalues.data()[0] >= p.eigenvalues.data()[1]);
        let c = sample_cov(&p.transform(&x).unwrap());
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((c[i][j] - want).abs() < 1e-8, "{c:?}");
            }
        }
    }

    #[test]
    fn rank_one_direction() {
        let dir = [3.0 / 5.0, 0.0, 4.0 / 5.0];
        let mut rng = Rng::new(3);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                let s = rng.normal();
                dir.iter().map(|d| d * s).collect()
            })
            .collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let p = pca_whiten_fit(&x, 1).unwrap();
        let got = p.components.row(0);
        let dot: f64 = got.iter().zip(dir).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-10);
        let err = pca_whiten_fit(&x, 2).unwrap_err().to_string();
        assert!(err.contains("effective rank 1"), "{err}");
    }

    #[test]
    fn component_count_bounds() {
        let x = Tensor::zeros(&[3, 5]);
        assert!(pca_whiten_fit(&x, 3).is_err());
        assert!(pca_whiten_fit(&Tensor::zeros(&[1, 2]), 1).is_err());
    }

    #[test]
    fn centering() {
        let x = Tensor::from_rows(&[vec![1.0, 5.0, -2.0], vec![-1.0, 5.0, 4.0]]).unwrap();
        let (c, mean) = center(&x).unwrap();
        assert_eq!(mean.data(), &[0.0, 5.0, 1.0]);
        assert_eq!(c.data(), &[1.0, 0.0, -3.0, -1.0, 0.0, 3.0]);
        let (again, _) = center(&c).unwrap();
        for (a, b) in again.data().iter().zip(c.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut rng = Rng::new(4);
        let x = Tensor::matrix(37, 4, (0..148).map(|_| 10.0 + rng.normal()).collect()).unwrap();
        let (c, _) = center(&x).unwrap();
        assert!(column_mean(&c).iter().all(|m| m.abs() < 1e-10));
    }
}
