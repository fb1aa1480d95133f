//! Exponential-loss gradient flows: standard gradient descent, its `(ρ, V)`
//! reparametrization, weight normalization and tangent-projected flows on
//! unit `L_p` spheres, plus the probes built on them.

mod critical;
mod dataset;
mod flows;
mod hessian;
mod loss;
mod projector;

pub use critical::{compare_critical_points, stationarity_residual_v, CriticalPointComparison};
pub use dataset::ClassificationDataset;
pub(crate) use dataset::random_unit;
pub use flows::{
    run_flow, step, step_reparametrized, step_rho_v, step_standard_gd, step_weight_norm, FlowConfig, FlowKind,
    FlowState, FlowTrace, StepDiagnostics, TraceRow,
};
pub use hessian::{hessian_probe, HessianMode, HessianSummary, MAX_HESSIAN_PARAMS};
pub use loss::{exp_loss, log_exp_loss, log_loss_and_descent, loss_and_descent, margin};
pub use projector::{tangent_projector, TangentProjector};
