//! Explicit Euler discretizations of the exponential-loss gradient flows.
//!
//! All flows share the descent direction `Ẇ_k = −∂L/∂W_k`. With `g_k = Ẇ_k`
//! evaluated at `W_k = ρ_k V_k`:
//!
//! | kind                  | `ρ̇_k`      | `V̇_k`                     | renormalize |
//! |-----------------------|------------|---------------------------|-------------|
//! | `StandardGd`          | (implied)  | (implied), `W += η g`     | no          |
//! | `RhoV`                | `V_kᵀ g_k` | `(I − V_k V_kᵀ) g_k / ρ_k` | no          |
//! | `WeightNorm`          | `V_kᵀ g_k` | `ρ_k (I − V_k V_kᵀ) g_k`   | L2          |
//! | `TangentConstrained`  | `V_kᵀ g_k` | `ρ_k S_p g_k`              | Lp          |

use serde::{Deserialize, Serialize};

use super::loss::{exp_loss, loss_and_descent, margin};
use super::projector::TangentProjector;
use super::ClassificationDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, norm_p, Matrix};
use crate::net::{Network, RhoVDecomposition};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowKind {
    StandardGd,
    RhoV,
    TangentConstrained { p: f64 },
    WeightNorm,
}

impl FlowKind {
    /// Norm order of the direction variables tracked by this flow.
    pub fn norm_order(&self) -> f64 {
        match self {
            FlowKind::TangentConstrained { p } => *p,
            _ => 2.0,
        }
    }

    fn renormalizes(&self) -> bool {
        matches!(self, FlowKind::WeightNorm | FlowKind::TangentConstrained { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FlowKind::TangentConstrained { p } if !(*p >= 1.0) => {
                Err(Error::Spec(format!("tangent constrained flow needs p >= 1, got {p}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub eta: f64,
    pub steps: usize,
    /// Halve the step (and keep it halved) whenever a step would raise the loss.
    pub backtracking: bool,
    /// Stop once `‖V̇_k‖ ≤ tol` for every layer.
    pub tol: f64,
    /// Record every n-th step in the trace (the last step is always recorded).
    pub record_every: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { eta: 1e-3, steps: 20_000, backtracking: false, tol: 1e-7, record_every: 1 }
    }
}

/// Per-step diagnostics of the last Euler step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    /// `|‖V_k + η V̇_k‖_p − 1|` before renormalization (zero for unconstrained flows).
    pub pre_renorm_drift: Vec<f64>,
    /// `|V_kᵀ V̇_k|`, the first-order norm change (exactly zero in exact arithmetic).
    pub first_order_drift: Vec<f64>,
    /// `‖V̇_k‖₂`.
    pub v_dot_norm: Vec<f64>,
    /// `‖Ẇ‖₂` over all parameters.
    pub grad_norm: f64,
    /// Number of step halvings taken by backtracking.
    pub halvings: usize,
}

/// A point on a flow trajectory.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub kind: FlowKind,
    pub net: Network,
    /// Maintained for flows in `(ρ, V)` coordinates; for standard GD it is
    /// recomputed from the weights (p = 2) when requested.
    pub decomposition: Option<RhoVDecomposition>,
    pub step: usize,
    pub time: f64,
    pub eta: f64,
    pub loss: f64,
    pub margin: f64,
    pub diagnostics: StepDiagnostics,
}

impl FlowState {
    pub fn new(kind: FlowKind, net: Network, data: &ClassificationDataset, eta: f64) -> Result<Self> {
        kind.validate()?;
        if !(eta > 0.0) {
            return Err(Error::Spec(format!("step size must be positive, got {eta}")));
        }
        let decomposition = match kind {
            FlowKind::StandardGd => None,
            _ => Some(RhoVDecomposition::of(&net, kind.norm_order())?),
        };
        let loss = exp_loss(&net, data);
        let margin = margin(&net, data);
        Ok(Self {
            kind,
            net,
            decomposition,
            step: 0,
            time: 0.0,
            eta,
            loss,
            margin,
            diagnostics: StepDiagnostics::default(),
        })
    }

    /// The `(ρ, V)` view of the current weights.
    pub fn rho_v(&self) -> Result<RhoVDecomposition> {
        match &self.decomposition {
            Some(d) => Ok(d.clone()),
            None => RhoVDecomposition::of(&self.net, 2.0),
        }
    }

    /// `log Π_k ‖W_k‖₂`.
    pub fn log_rho(&self) -> f64 {
        self.net.layers().iter().map(|w| w.norm_p(2.0).ln()).sum()
    }

    /// Directions `W_k / ‖W_k‖₂` flattened per layer.
    pub fn l2_directions(&self) -> Vec<Vec<f64>> {
        self.net
            .layers()
            .iter()
            .map(|w| {
                let n = w.norm_p(2.0);
                w.as_slice().iter().map(|v| v / n).collect()
            })
            .collect()
    }

    pub fn is_converged(&self, tol: f64) -> bool {
        self.step > 0 && self.diagnostics.v_dot_norm.iter().all(|&v| v <= tol)
    }
}

fn check_finite(step: usize, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { step, reason: "non-finite gradient".into() })
    }
}

/// One Euler step of the flow named by `state.kind`.
pub fn step(state: &FlowState, data: &ClassificationDataset, backtracking: bool) -> Result<FlowState> {
    match state.kind {
        FlowKind::StandardGd => step_standard_gd(state, data, backtracking),
        _ => step_reparametrized(state, data, backtracking),
    }
}

/// `W ← W + η Σ_n y_n ∂f/∂W(x_n) e^{−y_n f(x_n)}`.
pub fn step_standard_gd(state: &FlowState, data: &ClassificationDataset, backtracking: bool) -> Result<FlowState> {
    let (loss, dir) = loss_and_descent(&state.net, data)?;
    check_finite(state.step, &dir)?;
    let params = state.net.params();
    let mut eta = state.eta;
    let mut halvings = 0;
    let (net, new_loss) = loop {
        let moved: Vec<f64> = params.iter().zip(&dir).map(|(w, g)| w + eta * g).collect();
        let net = state.net.with_params(&moved)?;
        let new_loss = exp_loss(&net, data);
        if !backtracking || new_loss <= loss || halvings >= 60 {
            break (net, new_loss);
        }
        eta *= 0.5;
        halvings += 1;
    };
    if !new_loss.is_finite() {
        return Err(Error::Diverged { step: state.step, reason: "loss overflow".into() });
    }

    let ranges = state.net.layer_ranges();
    let mut v_dot_norm = Vec::with_capacity(ranges.len());
    for (k, r) in ranges.iter().enumerate() {
        let w = state.net.layer(k).as_slice();
        let rho = norm2(w);
        let g = &dir[r.clone()];
        // V̇ = (I − V Vᵀ) Ẇ / ρ
        let vg = dot(w, g) / rho;
        let vdot: Vec<f64> = g.iter().zip(w).map(|(gi, wi)| (gi - wi / rho * vg) / rho).collect();
        v_dot_norm.push(if rho > 0.0 { norm2(&vdot) } else { f64::INFINITY });
    }
    Ok(FlowState {
        kind: state.kind,
        margin: margin(&net, data),
        net,
        decomposition: None,
        step: state.step + 1,
        time: state.time + eta,
        eta,
        loss: new_loss,
        diagnostics: StepDiagnostics {
            pre_renorm_drift: vec![0.0; ranges.len()],
            first_order_drift: vec![0.0; ranges.len()],
            v_dot_norm,
            grad_norm: norm2(&dir),
            halvings,
        },
    })
}

/// Euler step in `(ρ, V)` coordinates for the reparametrized, weight
/// normalized and tangent-constrained flows.
pub fn step_reparametrized(state: &FlowState, data: &ClassificationDataset, backtracking: bool) -> Result<FlowState> {
    let dec = state
        .decomposition
        .as_ref()
        .ok_or_else(|| Error::Spec("flow state lacks a (rho, V) decomposition".into()))?;
    let (loss, dir) = loss_and_descent(&state.net, data)?;
    check_finite(state.step, &dir)?;
    let ranges = state.net.layer_ranges();
    let p = dec.p;

    // Velocities are independent of η; compute them once.
    let mut rho_dot = Vec::with_capacity(ranges.len());
    let mut v_dot: Vec<Vec<f64>> = Vec::with_capacity(ranges.len());
    for (k, r) in ranges.iter().enumerate() {
        let v = dec.directions[k].as_slice();
        let rho = dec.rho[k];
        if !(rho > 0.0) {
            return Err(Error::DegenerateLayer { layer: k });
        }
        let g = &dir[r.clone()];
        rho_dot.push(dot(v, g));
        let vd = match state.kind {
            FlowKind::RhoV => {
                let vg = dot(v, g);
                g.iter().zip(v).map(|(gi, vi)| (gi - vi * vg) / rho).collect()
            }
            FlowKind::WeightNorm => {
                let vg = dot(v, g);
                g.iter().zip(v).map(|(gi, vi)| rho * (gi - vi * vg)).collect()
            }
            FlowKind::TangentConstrained { p } => {
                let mut sg = TangentProjector::new(v, p)?.apply(g);
                sg.iter_mut().for_each(|x| *x *= rho);
                sg
            }
            FlowKind::StandardGd => unreachable!(),
        };
        v_dot.push(vd);
    }

    let renormalize = state.kind.renormalizes();
    let mut eta = state.eta;
    let mut halvings = 0;
    let (new_dec, net, new_loss, drift) = loop {
        let mut rho_new = Vec::with_capacity(ranges.len());
        let mut dirs = Vec::with_capacity(ranges.len());
        let mut drift = Vec::with_capacity(ranges.len());
        let mut collapsed = None;
        for k in 0..ranges.len() {
            let old = &dec.directions[k];
            if v_dot[k].iter().all(|&x| x == 0.0) {
                drift.push(0.0);
                dirs.push(old.clone());
            } else {
                let moved: Vec<f64> = old.as_slice().iter().zip(&v_dot[k]).map(|(a, b)| a + eta * b).collect();
                let n = norm_p(&moved, p);
                if renormalize {
                    drift.push((n - 1.0).abs());
                    dirs.push(Matrix::from_vec(old.rows(), old.cols(), moved.iter().map(|x| x / n).collect()));
                } else {
                    drift.push(0.0);
                    dirs.push(Matrix::from_vec(old.rows(), old.cols(), moved));
                }
            }
            let r = dec.rho[k] + eta * rho_dot[k];
            if !(r > 0.0) {
                collapsed = Some(k);
            }
            rho_new.push(r);
        }
        if let Some(layer) = collapsed {
            if backtracking && halvings < 60 {
                eta *= 0.5;
                halvings += 1;
                continue;
            }
            return Err(Error::DegenerateLayer { layer });
        }
        let new_dec = RhoVDecomposition { rho: rho_new, directions: dirs, p };
        let net = new_dec.recompose(&state.net)?;
        let new_loss = exp_loss(&net, data);
        if !backtracking || new_loss <= loss || halvings >= 60 {
            break (new_dec, net, new_loss, drift);
        }
        eta *= 0.5;
        halvings += 1;
    };
    if !new_loss.is_finite() {
        return Err(Error::Diverged { step: state.step, reason: "loss overflow".into() });
    }
    let first_order_drift = dec
        .directions
        .iter()
        .zip(&v_dot)
        .map(|(v, vd)| dot(v.as_slice(), vd).abs())
        .collect();
    Ok(FlowState {
        kind: state.kind,
        margin: margin(&net, data),
        net,
        decomposition: Some(new_dec),
        step: state.step + 1,
        time: state.time + eta,
        eta,
        loss: new_loss,
        diagnostics: StepDiagnostics {
            pre_renorm_drift: drift,
            first_order_drift,
            v_dot_norm: v_dot.iter().map(|v| norm2(v)).collect(),
            grad_norm: norm2(&dir),
            halvings,
        },
    })
}

/// Weight normalization step; `state` must carry a p = 2 decomposition.
pub fn step_weight_norm(state: &FlowState, data: &ClassificationDataset, backtracking: bool) -> Result<FlowState> {
    if state.kind != FlowKind::WeightNorm {
        return Err(Error::Spec(format!("expected a weight-norm state, got {:?}", state.kind)));
    }
    step_reparametrized(state, data, backtracking)
}

/// Unconstrained `(ρ, V)` reparametrization of standard gradient descent.
pub fn step_rho_v(state: &FlowState, data: &ClassificationDataset, backtracking: bool) -> Result<FlowState> {
    if state.kind != FlowKind::RhoV {
        return Err(Error::Spec(format!("expected a rho-V state, got {:?}", state.kind)));
    }
    step_reparametrized(state, data, backtracking)
}

/// One recorded row of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub time: f64,
    pub loss: f64,
    pub margin: f64,
    pub log_rho_product: f64,
    pub rho: Vec<f64>,
    pub norm_drift: Vec<f64>,
    pub grad_norm: f64,
}

impl TraceRow {
    fn of(state: &FlowState) -> Self {
        let rho = match &state.decomposition {
            Some(d) => d.rho.clone(),
            None => state.net.layers().iter().map(|w| w.norm_p(2.0)).collect(),
        };
        Self {
            step: state.step,
            time: state.time,
            loss: state.loss,
            margin: state.margin,
            log_rho_product: rho.iter().map(|r| r.ln()).sum(),
            rho,
            norm_drift: state.diagnostics.pre_renorm_drift.clone(),
            grad_norm: state.diagnostics.grad_norm,
        }
    }

    /// `Π ρ_k`, recovered from log space.
    pub fn rho_product(&self) -> f64 {
        self.log_rho_product.exp()
    }
}

#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub rows: Vec<TraceRow>,
    pub final_state: FlowState,
    pub converged: bool,
    /// Largest pre-renormalization drift seen over all steps and layers.
    pub max_pre_renorm_drift: f64,
    /// Largest `|‖V_k‖_p − 1|` after each step (after renormalization).
    pub max_norm_deviation: f64,
}

/// Integrate `kind` from `net` for up to `config.steps` steps.
pub fn run_flow(kind: FlowKind, net: Network, data: &ClassificationDataset, config: &FlowConfig) -> Result<FlowTrace> {
    let mut state = FlowState::new(kind, net, data, config.eta)?;
    let every = config.record_every.max(1);
    let mut rows = vec![TraceRow::of(&state)];
    let mut max_drift = 0.0f64;
    let mut max_dev = 0.0f64;
    let mut converged = false;
    for _ in 0..config.steps {
        state = step(&state, data, config.backtracking)?;
        max_drift = state.diagnostics.pre_renorm_drift.iter().fold(max_drift, |m, &d| m.max(d));
        if let Some(d) = &state.decomposition {
            max_dev = max_dev.max(d.max_norm_deviation());
        }
        converged = state.is_converged(config.tol);
        if state.step % every == 0 || converged {
            rows.push(TraceRow::of(&state));
        }
        if converged {
            break;
        }
    }
    if rows.last().map(|r| r.step) != Some(state.step) {
        rows.push(TraceRow::of(&state));
    }
    Ok(FlowTrace { rows, final_state: state, converged, max_pre_renorm_drift: max_drift, max_norm_deviation: max_dev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, ArchitectureSpec};
    use crate::rng::seeded_rng;

    fn linear(w: &[f64]) -> Network {
        Network::new(
            ArchitectureSpec::linear(w.len()),
            Activation::Relu,
            vec![Matrix::from_vec(1, w.len(), w.to_vec())],
        )
        .unwrap()
    }

    #[test]
    fn one_gd_step_by_hand() {
        let x = [0.6, -0.3];
        let data = ClassificationDataset::new(vec![x.to_vec()], vec![-1.0]).unwrap();
        let w = [0.2, 0.5];
        let eta = 0.1;
        let s0 = FlowState::new(FlowKind::StandardGd, linear(&w), &data, eta).unwrap();
        let s1 = step_standard_gd(&s0, &data, false).unwrap();
        let e = (-(-1.0) * (w[0] * x[0] + w[1] * x[1]) as f64).exp();
        let expect = [w[0] + eta * -1.0 * x[0] * e, w[1] + eta * -1.0 * x[1] * e];
        for (a, b) in s1.net.params().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn one_weight_norm_step_by_hand() {
        let x = [0.6, 0.8];
        let data = ClassificationDataset::new(vec![x.to_vec()], vec![1.0]).unwrap();
        let (rho, v) = (2.0, [1.0, 0.0]);
        let eta = 0.01;
        let s0 = FlowState::new(FlowKind::WeightNorm, linear(&[rho * v[0], rho * v[1]]), &data, eta).unwrap();
        let s1 = step_weight_norm(&s0, &data, false).unwrap();
        // Ẇ = x e^{−ρ vᵀx}; ρ̇ = vᵀẆ; v̇ = ρ (I − v vᵀ) Ẇ
        let e = (-rho * 0.6f64).exp();
        let g = [x[0] * e, x[1] * e];
        let rho1 = rho + eta * g[0];
        let vpre = [1.0, eta * rho * g[1]];
        let n = (vpre[0] * vpre[0] + vpre[1] * vpre[1]).sqrt();
        let d = s1.decomposition.as_ref().unwrap();
        assert!((d.rho[0] - rho1).abs() < 1e-15);
        assert!((d.directions[0].get(0, 0) - vpre[0] / n).abs() < 1e-15);
        assert!((d.directions[0].get(0, 1) - vpre[1] / n).abs() < 1e-15);
        assert!((s1.diagnostics.pre_renorm_drift[0] - (n - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_state_unchanged() {
        // All-dead hidden layer: every unit has negative pre-activation.
        let spec = ArchitectureSpec::Dense { input_dim: 2, hidden: vec![2], input_bias: false };
        let w1 = Matrix::from_vec(2, 2, vec![-1.0, -1.0, -2.0, -0.5]);
        let w2 = Matrix::from_vec(1, 2, vec![1.0, 1.0]);
        let net = Network::new(spec, Activation::Relu, vec![w1, w2]).unwrap();
        let data = ClassificationDataset::new(vec![vec![0.5, 0.5], vec![1.0, 0.2]], vec![1.0, -1.0]).unwrap();
        for kind in [FlowKind::StandardGd, FlowKind::RhoV, FlowKind::WeightNorm, FlowKind::TangentConstrained { p: 3.0 }] {
            let s0 = FlowState::new(kind, net.clone(), &data, 0.1).unwrap();
            let s1 = step(&s0, &data, false).unwrap();
            assert_eq!(s1.net.params(), net.params(), "{kind:?}");
            assert!(s1.diagnostics.v_dot_norm.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn weight_norm_first_order_drift_vanishes() {
        let mut rng = seeded_rng(4);
        let data = ClassificationDataset::random_linear_separable(5, 12, 3, 0.05);
        let spec = ArchitectureSpec::Dense { input_dim: 3, hidden: vec![4], input_bias: false };
        let net = Network::random(spec, Activation::Relu, &mut rng).unwrap();
        let mut s = FlowState::new(FlowKind::WeightNorm, net, &data, 1e-4).unwrap();
        for _ in 0..50 {
            s = step(&s, &data, false).unwrap();
            assert!(s.diagnostics.first_order_drift.iter().all(|&d| d <= 1e-12));
        }
    }

    #[test]
    fn gd_loss_is_monotone_on_separable_data() {
        let data = ClassificationDataset::random_linear_separable(9, 20, 2, 0.05);
        let cfg = FlowConfig { eta: 1e-3, steps: 10_000, record_every: 1, ..FlowConfig::default() };
        let trace = run_flow(FlowKind::StandardGd, linear(&[0.1, -0.3]), &data, &cfg).unwrap();
        assert_eq!(trace.rows.len(), 10_001);
        for w in trace.rows.windows(2) {
            assert!(w[1].loss <= w[0].loss, "loss rose at step {}", w[1].step);
        }
    }

    #[test]
    fn backtracking_keeps_every_flow_monotone() {
        let mut rng = seeded_rng(12);
        let data = ClassificationDataset::random_linear_separable(2, 15, 2, 0.05);
        let spec = ArchitectureSpec::Dense { input_dim: 2, hidden: vec![3], input_bias: false };
        let net = Network::random(spec, Activation::Relu, &mut rng).unwrap();
        let cfg = FlowConfig { eta: 2.0, steps: 300, backtracking: true, ..FlowConfig::default() };
        for kind in [FlowKind::StandardGd, FlowKind::RhoV, FlowKind::WeightNorm, FlowKind::TangentConstrained { p: 1.5 }] {
            let trace = run_flow(kind, net.clone(), &data, &cfg).unwrap();
            for w in trace.rows.windows(2) {
                assert!(w[1].loss <= w[0].loss, "{kind:?} rose at step {}", w[1].step);
            }
        }
    }

    #[test]
    fn invalid_p_rejected() {
        let data = ClassificationDataset::random_linear_separable(1, 3, 2, 0.1);
        assert!(FlowState::new(FlowKind::TangentConstrained { p: 0.5 }, linear(&[1.0, 0.0]), &data, 1e-3).is_err());
        assert!(FlowState::new(FlowKind::StandardGd, linear(&[1.0, 0.0]), &data, 0.0).is_err());
    }
}
