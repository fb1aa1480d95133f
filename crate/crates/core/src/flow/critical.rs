use serde::{Deserialize, Serialize};

use super::flows::{run_flow, FlowConfig, FlowKind, FlowState};
use super::ClassificationDataset;
use crate::error::{Error, Result};
use crate::linalg::{angle, axpy, norm2};
use crate::net::{Network, Workspace};

/// Terminal directions of two flows started from the same weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointComparison {
    /// Angle in radians between the L2-normalized `V_k` of the two runs.
    pub angles: Vec<f64>,
    pub converged: [bool; 2],
    pub steps: [usize; 2],
    pub final_log_rho: [f64; 2],
}

impl CriticalPointComparison {
    pub fn max_angle(&self) -> f64 {
        self.angles.iter().copied().fold(0.0, f64::max)
    }
}

/// Run `kind_a` and `kind_b` from `init` and compare their terminal layer
/// directions. Non-convergence is reported in `converged`, never as an error.
pub fn compare_critical_points(
    kind_a: FlowKind,
    kind_b: FlowKind,
    init: &Network,
    data: &ClassificationDataset,
    config: &FlowConfig,
) -> Result<CriticalPointComparison> {
    let cfg = FlowConfig { record_every: usize::MAX, ..config.clone() };
    let a = run_flow(kind_a, init.clone(), data, &cfg)?;
    let b = run_flow(kind_b, init.clone(), data, &cfg)?;
    let da = a.final_state.l2_directions();
    let db = b.final_state.l2_directions();
    Ok(CriticalPointComparison {
        angles: da.iter().zip(&db).map(|(u, v)| angle(u, v)).collect(),
        converged: [a.converged, b.converged],
        steps: [a.final_state.step, b.final_state.step],
        final_log_rho: [a.final_state.log_rho(), b.final_state.log_rho()],
    })
}

/// `‖Σ_n α_n y_n ρ (∂f̃(x_n)/∂V_k − V_k f̃(x_n))‖` with
/// `α_n = exp(−y_n ρ f̃(x_n))`, `ρ = Π ρ_k` and p = 2 directions. Zero
/// exactly at stationary points of the `V_k` flow.
pub fn stationarity_residual_v(state: &FlowState, data: &ClassificationDataset, k: usize) -> Result<f64> {
    let dec = state.rho_v()?;
    if dec.p != 2.0 {
        return Err(Error::Spec("stationarity residual is defined for p = 2".into()));
    }
    if k >= dec.directions.len() {
        return Err(Error::Shape { expected: dec.directions.len(), got: k });
    }
    let normalized = dec.normalized(&state.net)?;
    let rho = dec.rho_product();
    let range = normalized.layer_ranges()[k].clone();
    let v_k = dec.directions[k].as_slice();
    let mut ws = Workspace::default();
    let mut grad = vec![0.0; normalized.param_len()];
    let mut acc = vec![0.0; v_k.len()];
    for (x, y) in data.iter() {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let ft = normalized.accumulate_gradient(x, 1.0, &mut grad, &mut ws);
        let w = (-y * rho * ft).exp() * y * rho;
        axpy(&mut acc, w, &grad[range.clone()]);
        axpy(&mut acc, -w * ft, v_k);
    }
    Ok(norm2(&acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::net::{Activation, ArchitectureSpec};

    fn linear(w: &[f64]) -> Network {
        Network::new(
            ArchitectureSpec::linear(w.len()),
            Activation::Relu,
            vec![Matrix::from_vec(1, w.len(), w.to_vec())],
        )
        .unwrap()
    }

    #[test]
    fn orthogonal_direction_residual_by_hand() {
        let data = ClassificationDataset::new(vec![vec![0.0, 0.7]], vec![1.0]).unwrap();
        let rho = 3.0;
        let s = FlowState::new(FlowKind::WeightNorm, linear(&[rho, 0.0]), &data, 1e-3).unwrap();
        // f̃ = 0, α = 1: residual = ρ ‖x‖
        assert!((stationarity_residual_v(&s, &data, 0).unwrap() - rho * 0.7).abs() < 1e-14);
    }

    #[test]
    fn linear_residual_matches_closed_form() {
        let data = ClassificationDataset::random_linear_separable(3, 6, 2, 0.05);
        let w = [1.3, -0.4];
        let s = FlowState::new(FlowKind::StandardGd, linear(&w), &data, 1e-3).unwrap();
        let rho = norm2(&w);
        let v = [w[0] / rho, w[1] / rho];
        let mut acc = [0.0, 0.0];
        for (x, y) in data.iter() {
            let vx = v[0] * x[0] + v[1] * x[1];
            let a = (-y * rho * vx).exp();
            for i in 0..2 {
                acc[i] += a * rho * y * (x[i] - v[i] * vx);
            }
        }
        let expect = norm2(&acc);
        assert!((stationarity_residual_v(&s, &data, 0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn support_vector_direction_is_stationary() {
        let data = ClassificationDataset::new(vec![vec![0.6, 0.8]], vec![1.0]).unwrap();
        let s = FlowState::new(FlowKind::StandardGd, linear(&[1.2, 1.6]), &data, 1e-3).unwrap();
        assert!(stationarity_residual_v(&s, &data, 0).unwrap() < 1e-15);
    }

    #[test]
    fn identical_kinds_agree_exactly() {
        let data = ClassificationDataset::random_linear_separable(7, 10, 2, 0.05);
        let cfg = FlowConfig { eta: 1e-2, steps: 500, ..FlowConfig::default() };
        let mut w = vec![0.0; 2];
        for s in data.signed_points() {
            axpy(&mut w, 1.0, &s);
        }
        let c = compare_critical_points(FlowKind::WeightNorm, FlowKind::WeightNorm, &linear(&w), &data, &cfg)
            .unwrap();
        assert_eq!(c.angles, vec![0.0]);
    }
}
