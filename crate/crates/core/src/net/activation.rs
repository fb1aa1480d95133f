use serde::{Deserialize, Serialize};

/// Pointwise nonlinearity.
///
/// `SmoothRelu` replaces the kink of the ReLU on `[-delta, delta]` by the
/// quartic `s(u) = u^3 (4 delta - u) / (16 delta^3)`, `u = z + delta`, which
/// agrees with the ReLU in value, slope and curvature at both ends, so the
/// blend is C2 and convex.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    SmoothRelu { delta: f64 },
}

pub const DEFAULT_SMOOTHING: f64 = 1e-3;

impl Default for Activation {
    fn default() -> Self {
        Activation::Relu
    }
}

impl Activation {
    pub fn smooth_default() -> Self {
        Activation::SmoothRelu { delta: DEFAULT_SMOOTHING }
    }

    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        match *self {
            Activation::Relu => z.max(0.0),
            Activation::SmoothRelu { delta } => {
                if z <= -delta {
                    0.0
                } else if z >= delta {
                    z
                } else {
                    let u = z + delta;
                    u * u * u * (4.0 * delta - u) / (16.0 * delta * delta * delta)
                }
            }
        }
    }

    /// Derivative; the ReLU uses the subgradient 0 at the origin.
    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::SmoothRelu { delta } => {
                if z <= -delta {
                    0.0
                } else if z >= delta {
                    1.0
                } else {
                    let u = z + delta;
                    u * u * (3.0 * delta - u) / (4.0 * delta * delta * delta)
                }
            }
        }
    }

    /// True when `value(z) == derivative(z) * z` holds for every z.
    pub fn is_positively_homogeneous(&self) -> bool {
        matches!(self, Activation::Relu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_relu_matches_relu_outside_window() {
        let a = Activation::SmoothRelu { delta: 0.1 };
        for z in [-3.0, -0.1, -0.100001, 0.1, 0.5, 7.0] {
            assert_eq!(a.value(z), z.max(0.0));
        }
    }

    #[test]
    fn smooth_relu_is_c2_at_the_joins() {
        let d = 0.25;
        let a = Activation::SmoothRelu { delta: d };
        let h = 1e-6;
        for edge in [-d, d] {
            let left = (a.derivative(edge - h) - a.derivative(edge - 2.0 * h)) / h;
            let right = (a.derivative(edge + 2.0 * h) - a.derivative(edge + h)) / h;
            assert!((left - right).abs() < 1e-4, "curvature jump at {edge}");
            assert!((a.derivative(edge - h) - a.derivative(edge + h)).abs() < 1e-6);
        }
    }

    #[test]
    fn smooth_relu_is_convex_and_derivative_consistent() {
        let a = Activation::SmoothRelu { delta: 0.5 };
        let h = 1e-6;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=200 {
            let z = -0.6 + 1.2 * i as f64 / 200.0;
            let fd = (a.value(z + h) - a.value(z - h)) / (2.0 * h);
            assert!((fd - a.derivative(z)).abs() < 1e-8);
            assert!(a.derivative(z) >= prev - 1e-15);
            prev = a.derivative(z);
        }
    }

    #[test]
    fn relu_homogeneity() {
        let a = Activation::Relu;
        for z in [-2.0, -1e-9, 1e-9, 3.5] {
            assert_eq!(a.value(z), a.derivative(z) * z);
        }
        assert_eq!(a.derivative(0.0), 0.0);
    }
}
