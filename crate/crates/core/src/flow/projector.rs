use crate::error::{Error, Result};
use crate::linalg::{dot, norm_p, Matrix};

/// Projector onto the tangent space of the unit `L_p` sphere at `u`:
/// `S_p = I − ν νᵀ / ‖ν‖₂²` with `ν_i = sign(u_i) (|u_i| / ‖u‖_p)^{p−1}`,
/// the gradient of `‖u‖_p`. `sign(0) = 0`.
#[derive(Clone, Debug)]
pub struct TangentProjector {
    nu: Vec<f64>,
    nu_sq: f64,
}

impl TangentProjector {
    pub fn new(u: &[f64], p: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::Spec(format!("norm order must be >= 1, got {p}")));
        }
        let n = norm_p(u, p);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        let nu: Vec<f64> = u
            .iter()
            .map(|&ui| {
                if ui == 0.0 {
                    0.0
                } else if p == 2.0 {
                    ui / n
                } else {
                    ui.signum() * (ui.abs() / n).powf(p - 1.0)
                }
            })
            .collect();
        let nu_sq = dot(&nu, &nu);
        Ok(Self { nu, nu_sq })
    }

    /// Normal direction `ν`.
    pub fn normal(&self) -> &[f64] {
        &self.nu
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let mut out = g.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    pub fn apply_in_place(&self, g: &mut [f64]) {
        let c = dot(&self.nu, g) / self.nu_sq;
        for (gi, ni) in g.iter_mut().zip(&self.nu) {
            *gi -= c * ni;
        }
    }

    /// Dense `S_p`.
    pub fn matrix(&self) -> Matrix {
        let n = self.nu.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let id = if i == j { 1.0 } else { 0.0 };
                m.set(i, j, id - self.nu[i] * self.nu[j] / self.nu_sq);
            }
        }
        m
    }
}

/// Functional form of [`TangentProjector::new`].
pub fn tangent_projector(u: &[f64], p: f64) -> Result<TangentProjector> {
    TangentProjector::new(u, p)
}
