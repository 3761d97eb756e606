//! Central finite-difference verification of analytic gradients.

mod suite;

use crate::error::{Error, Result};
use crate::params::ParamStore;

pub use suite::{full_model_check, run_suite, BlockResult, SuiteConfig, SuiteReport, GRADCHECK_EPS, GRADCHECK_TOLERANCE};

/// Per-parameter outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the gradients already stored in `params` against central
/// differences of `f`, returning the largest relative error over all elements.
pub fn check_gradients<F>(f: F, params: &ParamStore, eps: f64) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    check_gradients_detailed(f, params, eps).map(|r| r.max_rel_error())
}

pub fn check_gradients_detailed<F>(mut f: F, params: &ParamStore, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut report = Vec::with_capacity(names.len());
    for name in names {
        let n = params.get(&name).unwrap().value.len();
        let mut worst = (0.0, 0);
        for k in 0..n {
            let orig = params.get(&name).unwrap().value.data()[k];
            let analytic = params.get(&name).unwrap().grad.data()[k];

            probe.get_mut(&name).unwrap().value.data_mut()[k] = orig + eps;
            let plus = f(&probe)?;
            probe.get_mut(&name).unwrap().value.data_mut()[k] = orig - eps;
            let minus = f(&probe)?;
            probe.get_mut(&name).unwrap().value.data_mut()[k] = orig;

            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("objective while perturbing {name}[{k}]")));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic, numeric);
            if err > worst.0 {
                worst = (err, k);
            }
        }
        report.push(ParamCheck {
            name,
            max_rel_error: worst.0,
            worst_index: worst.1,
        });
    }
    Ok(GradCheckReport { params: report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(theta: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::vector(theta)).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore, g: Vec<f64>) {
        s.get_mut("theta").unwrap().grad = Tensor::vector(g);
    }

    fn quadratic(s: &ParamStore) -> Result<f64> {
        Ok(s.value("theta")?.norm_sq())
    }

    #[test]
    fn quadratic_matches_closed_form() {
        let theta = vec![0.3, -1.2, 2.5, 0.01];
        let mut s = store(theta.clone());
        set_grad(&mut s, theta.iter().map(|t| 2.0 * t).collect());
        let err = check_gradients(quadratic, &s, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn linear_is_exact() {
        let c = [1.5, -2.0, 0.25];
        let mut s = store(vec![0.7, 0.1, -3.0]);
        set_grad(&mut s, c.to_vec());
        let f = |s: &ParamStore| Ok(s.value("theta")?.data().iter().zip(c).map(|(a, b)| a * b).sum());
        for eps in [1e-3, 1e-5, 0.5] {
            assert!(check_gradients(f, &s, eps).unwrap() < 1e-9);
        }
    }

    #[test]
    fn doubled_gradient_is_detected() {
        let theta = vec![0.5, -1.0, 2.0];
        let mut s = store(theta.clone());
        set_grad(&mut s, theta.iter().map(|t| 4.0 * t).collect());
        let err = check_gradients(quadratic, &s, 1e-5).unwrap();
        assert!((err - 0.5).abs() < 1e-6, "{err}");
    }

    #[test]
    fn non_finite_objective_names_parameter() {
        let mut s = store(vec![1.0]);
        set_grad(&mut s, vec![0.0]);
        let err = check_gradients(|_| Ok(f64::NAN), &s, 1e-5).unwrap_err();
        assert!(err.to_string().contains("theta[0]"), "{err}");
    }
}
