use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::loss::loss_and_descent;
use super::ClassificationDataset;
use crate::error::{Error, Result};
use crate::net::{ArchitectureSpec, Network};

/// Largest parameter count accepted by the dense Hessian probe.
pub const MAX_HESSIAN_PARAMS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HessianMode {
    /// Central differences of the analytic loss gradient with step `h`.
    Numerical { h: f64 },
    /// `Σ_n e^{−y_n wᵀx_n} x_n x_nᵀ`; only for the bias-free linear model.
    LinearClosedForm,
}

impl Default for HessianMode {
    fn default() -> Self {
        HessianMode::Numerical { h: 1e-5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HessianSummary {
    pub matrix: DMatrix<f64>,
    /// Eigenvalues, largest first.
    pub eigenvalues: Vec<f64>,
}

impl HessianSummary {
    pub fn top(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    /// Largest eigenvalue magnitude.
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0f64, |m, e| m.max(e.abs()))
    }
}

/// Dense Hessian of the exponential loss with its spectrum.
pub fn hessian_probe(net: &Network, data: &ClassificationDataset, mode: HessianMode) -> Result<HessianSummary> {
    let n = net.param_len();
    if n > MAX_HESSIAN_PARAMS {
        return Err(Error::TooLarge(format!("{n} parameters exceed the dense Hessian limit {MAX_HESSIAN_PARAMS}")));
    }
    let matrix = match mode {
        HessianMode::Numerical { h } => {
            let params = net.params();
            let mut m = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus[j] += h;
                minus[j] -= h;
                // loss_and_descent returns −∇L
                let (_, gp) = loss_and_descent(&net.with_params(&plus)?, data)?;
                let (_, gm) = loss_and_descent(&net.with_params(&minus)?, data)?;
                for i in 0..n {
                    m[(i, j)] = -(gp[i] - gm[i]) / (2.0 * h);
                }
            }
            (&m + m.transpose()) * 0.5
        }
        HessianMode::LinearClosedForm => {
            if !matches!(net.spec(), ArchitectureSpec::Dense { hidden, input_bias: false, .. } if hidden.is_empty()) {
                return Err(Error::Spec("closed-form Hessian needs the bias-free linear model".into()));
            }
            let w = net.layer(0).as_slice();
            let mut m = DMatrix::zeros(n, n);
            for (x, y) in data.iter() {
                let e = (-y * crate::linalg::dot(w, x)).exp();
                for i in 0..n {
                    for j in 0..n {
                        m[(i, j)] += e * x[i] * x[j];
                    }
                }
            }
            m
        }
    };
    let mut eigenvalues: Vec<f64> = if n == 0 {
        Vec::new()
    } else {
        SymmetricEigen::new(matrix.clone()).eigenvalues.iter().copied().collect()
    };
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    Ok(HessianSummary { matrix, eigenvalues })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::net::Activation;

    fn linear(w: &[f64]) -> Network {
        Network::new(
            ArchitectureSpec::linear(w.len()),
            Activation::Relu,
            vec![Matrix::from_vec(1, w.len(), w.to_vec())],
        )
        .unwrap()
    }

    #[test]
    fn single_point_at_origin() {
        let data = ClassificationDataset::new(vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        let h = hessian_probe(&linear(&[0.0, 0.0]), &data, HessianMode::default()).unwrap();
        let expect = [[1.0, 0.0], [0.0, 0.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((h.matrix[(i, j)] - expect[i][j]).abs() < 1e-6);
            }
        }
        assert!((h.top() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_data_zero_hessian() {
        let data = ClassificationDataset::default();
        let h = hessian_probe(&linear(&[0.3, 0.1]), &data, HessianMode::default()).unwrap();
        assert!(h.matrix.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn numerical_matches_closed_form() {
        let data = ClassificationDataset::random_linear_separable(2, 8, 3, 0.05);
        let net = linear(&[0.4, -0.2, 0.9]);
        let a = hessian_probe(&net, &data, HessianMode::Numerical { h: 1e-4 }).unwrap();
        let b = hessian_probe(&net, &data, HessianMode::LinearClosedForm).unwrap();
        assert!((a.matrix - b.matrix).abs().max() < 1e-6);
    }

    #[test]
    fn size_limit() {
        let net = Network::zeros(ArchitectureSpec::linear(201), Activation::Relu).unwrap();
        let data = ClassificationDataset::default();
        assert!(matches!(hessian_probe(&net, &data, HessianMode::default()), Err(Error::TooLarge(_))));
    }
}
