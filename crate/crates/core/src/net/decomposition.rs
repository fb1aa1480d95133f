use super::network::Network;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `W_k = ρ_k V_k` with `‖V_k‖_p = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RhoVDecomposition {
    pub rho: Vec<f64>,
    pub directions: Vec<Matrix>,
    pub p: f64,
}

impl RhoVDecomposition {
    /// Split every layer of `net` into its p-norm and direction.
    pub fn of(net: &Network, p: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::Spec(format!("norm order must be >= 1, got {p}")));
        }
        let mut rho = Vec::with_capacity(net.layer_count());
        let mut directions = Vec::with_capacity(net.layer_count());
        for (k, w) in net.layers().iter().enumerate() {
            let r = w.norm_p(p);
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::DegenerateLayer { layer: k });
            }
            rho.push(r);
            directions.push(w.scaled(1.0 / r));
        }
        Ok(Self { rho, directions, p })
    }

    /// `ρ = Π ρ_k`.
    pub fn rho_product(&self) -> f64 {
        self.rho.iter().product()
    }

    pub fn log_rho_product(&self) -> f64 {
        self.rho.iter().map(|r| r.ln()).sum()
    }

    /// Rebuild the weights `ρ_k V_k` into a copy of `template`.
    pub fn recompose(&self, template: &Network) -> Result<Network> {
        let layers = self.rho.iter().zip(&self.directions).map(|(r, v)| v.scaled(*r)).collect();
        template.with_layers(layers)
    }

    /// The normalized network `f̃ = f(V_1, …, V_K)`.
    pub fn normalized(&self, template: &Network) -> Result<Network> {
        template.with_layers(self.directions.clone())
    }

    /// Largest `|‖V_k‖_p − 1|` over layers.
    pub fn max_norm_deviation(&self) -> f64 {
        self.directions.iter().fold(0.0f64, |m, v| m.max((v.norm_p(self.p) - 1.0).abs()))
    }
}

/// Convenience wrapper around [`RhoVDecomposition::of`].
pub fn decompose(net: &Network, p: f64) -> Result<RhoVDecomposition> {
    RhoVDecomposition::of(net, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, ArchitectureSpec};
    use crate::rng::seeded_rng;

    #[test]
    fn frobenius_three() {
        let net = Network::new(
            ArchitectureSpec::linear(2),
            Activation::Relu,
            vec![Matrix::from_vec(1, 2, vec![0.0, 3.0])],
        )
        .unwrap();
        let d = decompose(&net, 2.0).unwrap();
        assert_eq!(d.rho, vec![3.0]);
        assert!((d.directions[0].norm_p(2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_layer_is_degenerate() {
        let net = Network::zeros(ArchitectureSpec::linear(2), Activation::Relu).unwrap();
        assert!(matches!(decompose(&net, 2.0), Err(Error::DegenerateLayer { layer: 0 })));
    }

    #[test]
    fn round_trip_all_orders() {
        let mut rng = seeded_rng(21);
        let spec = ArchitectureSpec::Dense { input_dim: 3, hidden: vec![4, 3], input_bias: true };
        let net = Network::random(spec, Activation::Relu, &mut rng).unwrap();
        let x = [0.2, -0.4, 0.8];
        for p in [1.0, 2.0, 3.0] {
            let d = decompose(&net, p).unwrap();
            assert!(d.max_norm_deviation() <= 1e-10);
            let back = d.recompose(&net).unwrap();
            for (a, b) in back.params().iter().zip(net.params()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
            }
            let (fa, fb) = (back.forward(&x).unwrap(), net.forward(&x).unwrap());
            assert!((fa - fb).abs() <= 1e-12 * fb.abs());
            // f = ρ f̃ for layerwise homogeneous nets
            let ft = d.normalized(&net).unwrap().forward(&x).unwrap();
            assert!((d.rho_product() * ft - fb).abs() <= 1e-12 * fb.abs());
        }
    }
}
