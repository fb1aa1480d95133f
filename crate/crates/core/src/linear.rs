//! The one-layer linear model `f(x) = ρ vᵀx` under the exponential loss.
//!
//! With `z_n = y_n x_n`, unconstrained gradient descent in `(ρ, v)` is
//!
//! ```text
//! ρ̇ = Σ_n e^{−ρ vᵀz_n} vᵀz_n        v̇ = (1/ρ) Σ_n e^{−ρ vᵀz_n} (z_n − v vᵀz_n)
//! ```
//!
//! and weight normalization replaces the `1/ρ` in `v̇` by `ρ`. Both are
//! integrated with explicit Euler steps and `v` renormalized after each step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ClassificationDataset;
use crate::linalg::{dot, norm2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearFlow {
    Gd,
    Wn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearFlowConfig {
    pub eta: f64,
    pub steps: usize,
    /// Initial scale; also the restart value if ρ reaches zero.
    pub rho0: f64,
    pub record_every: usize,
}

impl Default for LinearFlowConfig {
    fn default() -> Self {
        Self { eta: 1e-3, steps: 1_000_000, rho0: 0.1, record_every: 100 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearFlowTrace {
    pub flow: LinearFlow,
    /// Continuous time `t = Σ η`.
    pub times: Vec<f64>,
    pub rho: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    /// `‖v(t) − x̄‖` against the max-margin direction `x̄`.
    pub eps: Vec<f64>,
    /// `max_n e^{−ρ vᵀz_n}`.
    pub max_exp_term: Vec<f64>,
    pub reference: Vec<f64>,
    /// How often ρ hit zero and was reset to `rho0`.
    pub restarts: usize,
}

impl LinearFlowTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_v(&self) -> &[f64] {
        self.v.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Index of the first record with `time >= t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| s >= t)
    }
}

pub fn run_linear_gd(data: &ClassificationDataset, v0: &[f64], config: &LinearFlowConfig) -> Result<LinearFlowTrace> {
    run_linear(LinearFlow::Gd, data, v0, config)
}

pub fn run_linear_wn(data: &ClassificationDataset, v0: &[f64], config: &LinearFlowConfig) -> Result<LinearFlowTrace> {
    run_linear(LinearFlow::Wn, data, v0, config)
}

pub fn run_linear(
    flow: LinearFlow,
    data: &ClassificationDataset,
    v0: &[f64],
    config: &LinearFlowConfig,
) -> Result<LinearFlowTrace> {
    if v0.len() != data.dim() {
        return Err(Error::Shape { expected: data.dim(), got: v0.len() });
    }
    if !(config.eta > 0.0) || !(config.rho0 > 0.0) {
        return Err(Error::Spec("eta and rho0 must be positive".into()));
    }
    let reference = support_vector_limit(data)?;
    let z = data.signed_points();
    let d = v0.len();
    let n0 = norm2(v0);
    if n0 == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut v: Vec<f64> = v0.iter().map(|x| x / n0).collect();
    let mut rho = config.rho0;
    let mut t = 0.0;
    let every = config.record_every.max(1);
    let cap = config.steps / every + 2;
    let mut trace = LinearFlowTrace {
        flow,
        times: Vec::with_capacity(cap),
        rho: Vec::with_capacity(cap),
        v: Vec::with_capacity(cap),
        eps: Vec::with_capacity(cap),
        max_exp_term: Vec::with_capacity(cap),
        reference,
        restarts: 0,
    };
    let mut sx = vec![0.0; d];
    let record = |trace: &mut LinearFlowTrace, t: f64, rho: f64, v: &[f64]| {
        let eps = v.iter().zip(&trace.reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let m = z.iter().map(|zn| dot(v, zn)).fold(f64::INFINITY, f64::min);
        trace.times.push(t);
        trace.rho.push(rho);
        trace.v.push(v.to_vec());
        trace.eps.push(eps);
        trace.max_exp_term.push((-rho * m).exp());
    };
    record(&mut trace, t, rho, &v);
    for s in 1..=config.steps {
        let mut rho_dot = 0.0;
        sx.iter_mut().for_each(|x| *x = 0.0);
        for zn in &z {
            let m = dot(&v, zn);
            let e = (-rho * m).exp();
            rho_dot += e * m;
            for (acc, (zi, vi)) in sx.iter_mut().zip(zn.iter().zip(&v)) {
                *acc += e * (zi - vi * m);
            }
        }
        let gain = match flow {
            LinearFlow::Gd => 1.0 / rho,
            LinearFlow::Wn => rho,
        };
        for (vi, si) in v.iter_mut().zip(&sx) {
            *vi += config.eta * gain * si;
        }
        let n = norm2(&v);
        if !n.is_finite() || n == 0.0 {
            return Err(Error::Diverged { step: s, reason: "direction collapsed".into() });
        }
        v.iter_mut().for_each(|x| *x /= n);
        rho += config.eta * rho_dot;
        if rho <= 0.0 {
            rho = config.rho0;
            trace.restarts += 1;
        }
        t += config.eta;
        if s % every == 0 || s == config.steps {
            record(&mut trace, t, rho, &v);
        }
    }
    Ok(trace)
}

/// Asymptotic rate models, each fitted by least squares in its linearizing
/// coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `ρ ≈ C log t + b`: regress ρ on `log t`.
    RhoLog,
    /// `ε ≈ A / log t`: regress `1/ε` on `log t`, `A = 1/slope`.
    ErrInvLog,
    /// `ε ≈ B t^{−½ log t}`: regress `log ε` on `(log t)²`, `B = e^{intercept}`.
    ErrWn,
    /// `max_n e^{−ρ vᵀz_n} ∝ t^{−s}`: regress the log on `log t`.
    ExpTerm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: RateModel,
    /// Model constant (C, A, B or s) first, then the raw slope and intercept.
    pub constant: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Minimum number of trace points inside a fit window.
pub const MIN_FIT_POINTS: usize = 1000;

/// Fit `model` over `window` (default: the last decade of the trace).
pub fn fit_rate(trace: &LinearFlowTrace, model: RateModel, window: Option<(f64, f64)>) -> Result<RateFit> {
    let t_end = trace.times.last().copied().unwrap_or(0.0);
    let (t0, t1) = window.unwrap_or((t_end / 10.0, t_end));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..trace.len() {
        let t = trace.times[i];
        if t < t0 || t > t1 || t <= 1.0 {
            continue;
        }
        let lt = t.ln();
        let (x, y) = match model {
            RateModel::RhoLog => (lt, trace.rho[i]),
            RateModel::ErrInvLog => (lt, 1.0 / trace.eps[i]),
            RateModel::ErrWn => (lt * lt, trace.eps[i].ln()),
            RateModel::ExpTerm => (lt, trace.max_exp_term[i].ln()),
        };
        if x.is_finite() && y.is_finite() {
            xs.push(x);
            ys.push(y);
        }
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!("window [{t0}, {t1}] holds {} points, need {MIN_FIT_POINTS}", xs.len())));
    }
    let (slope, intercept, r_squared) = least_squares(&xs, &ys)?;
    let constant = match model {
        RateModel::RhoLog => slope,
        RateModel::ErrInvLog => 1.0 / slope,
        RateModel::ErrWn => intercept.exp(),
        RateModel::ExpTerm => -slope,
    };
    Ok(RateFit { model, constant, slope, intercept, r_squared, window: (t0, t1), points: xs.len() })
}

/// Ordinary least squares `y ≈ a x + b`; returns `(a, b, R²)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 || syy <= 0.0 || !sxx.is_finite() || !syy.is_finite() {
        return Err(Error::Fit("degenerate (constant) series".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0);
    Ok((slope, intercept, r2))
}

/// Unit max-margin direction `argmax_{‖v‖=1} min_n y_n vᵀx_n` of a
/// bias-free linear classifier.
pub fn support_vector_limit(data: &ClassificationDataset) -> Result<Vec<f64>> {
    max_margin_linear(data).map(|(_, v)| v)
}

/// Max-margin direction and margin. In two dimensions the optimum is found
/// exactly by enumerating single support vectors and support pairs; in
/// higher dimensions the hard-margin dual is solved by coordinate ascent.
pub fn max_margin_linear(data: &ClassificationDataset) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::NotSeparable);
    }
    let z = data.signed_points();
    let (margin, v) = match data.dim() {
        1 => {
            let v = vec![z[0][0].signum()];
            (margin_of(&z, &v), v)
        }
        2 => max_margin_2d(&z),
        _ => max_margin_dual(&z)?,
    };
    if !(margin > 0.0) {
        return Err(Error::NotSeparable);
    }
    Ok((margin, v))
}

fn margin_of(z: &[Vec<f64>], v: &[f64]) -> f64 {
    z.iter().map(|zn| dot(v, zn)).fold(f64::INFINITY, f64::min)
}

fn max_margin_2d(z: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let mut candidates: Vec<[f64; 2]> = Vec::new();
    for zi in z {
        candidates.push([zi[0], zi[1]]);
    }
    for i in 0..z.len() {
        for j in (i + 1)..z.len() {
            // vᵀz_i = vᵀz_j  ⟺  v ⊥ (z_i − z_j)
            let (dx, dy) = (z[i][0] - z[j][0], z[i][1] - z[j][1]);
            candidates.push([-dy, dx]);
            candidates.push([dy, -dx]);
        }
    }
    let mut best = (f64::NEG_INFINITY, vec![1.0, 0.0]);
    for c in candidates {
        let n = (c[0] * c[0] + c[1] * c[1]).sqrt();
        if n == 0.0 {
            continue;
        }
        let v = vec![c[0] / n, c[1] / n];
        let m = margin_of(z, &v);
        if m > best.0 {
            best = (m, v);
        }
    }
    best
}

/// Hard-margin SVM through the origin: `max Σα − ½‖Σ α_n z_n‖²`, `α ≥ 0`.
/// `w = Σ α_n z_n` and the margin of `w/‖w‖` is `1/‖w‖`.
fn max_margin_dual(z: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    let d = z[0].len();
    let sq: Vec<f64> = z.iter().map(|zn| dot(zn, zn)).collect();
    let mut alpha = vec![0.0; z.len()];
    let mut w = vec![0.0; d];
    for _sweep in 0..200_000 {
        let mut change = 0.0f64;
        for n in 0..z.len() {
            if sq[n] == 0.0 {
                continue;
            }
            let grad = 1.0 - dot(&w, &z[n]);
            let new = (alpha[n] + grad / sq[n]).max(0.0);
            let delta = new - alpha[n];
            if delta != 0.0 {
                crate::linalg::axpy(&mut w, delta, &z[n]);
                alpha[n] = new;
                change = change.max(delta.abs());
            }
        }
        let total: f64 = alpha.iter().sum();
        if total > 1e12 {
            return Err(Error::NotSeparable);
        }
        if change < 1e-13 * total.max(1.0) {
            break;
        }
    }
    let n = norm2(&w);
    if n == 0.0 {
        return Err(Error::NotSeparable);
    }
    let v: Vec<f64> = w.iter().map(|x| x / n).collect();
    Ok((margin_of(z, &v), v))
}

/// The canonical one-support-vector instance: a single positive sample at
/// `e_1`, and a start direction `e_2` rotated by `tilt` radians toward it.
pub fn single_support_vector_instance(tilt: f64) -> (ClassificationDataset, Vec<f64>) {
    let data = ClassificationDataset::new(vec![vec![1.0, 0.0]], vec![1.0]).expect("valid instance");
    (data, vec![tilt.sin(), tilt.cos()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::angle;

    fn brute_force_2d(data: &ClassificationDataset, resolution: f64) -> (f64, Vec<f64>) {
        let z = data.signed_points();
        let steps = (2.0 * std::f64::consts::PI / resolution).ceil() as usize;
        (0..steps)
            .map(|i| {
                let a = i as f64 * resolution;
                let v = vec![a.cos(), a.sin()];
                (margin_of(&z, &v), v)
            })
            .fold((f64::NEG_INFINITY, vec![]), |best, c| if c.0 > best.0 { c } else { best })
    }

    #[test]
    fn symmetric_pair_oracle() {
        let data = ClassificationDataset::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![1.0, -1.0]).unwrap();
        let (m, v) = max_margin_linear(&data).unwrap();
        assert!((m - 1.0).abs() < 1e-15);
        assert!(angle(&v, &[1.0, 0.0]) < 1e-15);
        let (bm, bv) = brute_force_2d(&data, 1e-4);
        assert!((bm - m).abs() < 1e-8 && angle(&bv, &v) < 1e-4);
    }

    #[test]
    fn pair_enumeration_matches_brute_force() {
        for seed in 0..5 {
            let data = ClassificationDataset::random_linear_separable(seed, 12, 2, 0.05);
            let (m, v) = max_margin_linear(&data).unwrap();
            let (bm, bv) = brute_force_2d(&data, 1e-4);
            assert!(m >= bm - 1e-12, "seed {seed}");
            assert!(m - bm < 1e-4 && angle(&v, &bv) < 1e-3, "seed {seed}");
        }
    }

    #[test]
    fn dual_agrees_with_enumeration_in_2d() {
        for seed in 0..5 {
            let data = ClassificationDataset::random_linear_separable(seed, 12, 2, 0.05);
            let (m, v) = max_margin_linear(&data).unwrap();
            let (md, vd) = max_margin_dual(&data.signed_points()).unwrap();
            assert!((m - md).abs() < 1e-8 && angle(&v, &vd) < 1e-6, "seed {seed}");
        }
    }

    #[test]
    fn single_sample_and_scaling() {
        let data = ClassificationDataset::new(vec![vec![3.0, 4.0, 0.0]], vec![1.0]).unwrap();
        let v = support_vector_limit(&data).unwrap();
        assert!(angle(&v, &[0.6, 0.8, 0.0]) < 1e-9);
        let data = ClassificationDataset::random_linear_separable(11, 9, 2, 0.05);
        let a = support_vector_limit(&data).unwrap();
        let b = support_vector_limit(&data.scaled(7.5)).unwrap();
        assert!(angle(&a, &b) < 1e-12);
    }

    #[test]
    fn asymmetric_support_optimum() {
        let data = ClassificationDataset::asymmetric_support();
        let (m, v) = max_margin_linear(&data).unwrap();
        assert!(angle(&v, &[1.0, 0.5]) < 1e-12);
        assert!((m - 1.25f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn non_separable_is_an_error() {
        let xor = ClassificationDataset::new(
            vec![vec![1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0], vec![-1.0, 1.0]],
            vec![1.0, 1.0, -1.0, -1.0],
        )
        .unwrap();
        assert!(matches!(support_vector_limit(&xor), Err(Error::NotSeparable)));
        let xor3 = ClassificationDataset::new(
            vec![vec![1.0, 1.0, 0.0], vec![-1.0, -1.0, 0.0], vec![1.0, -1.0, 0.0], vec![-1.0, 1.0, 0.0]],
            vec![1.0, 1.0, -1.0, -1.0],
        )
        .unwrap();
        assert!(matches!(support_vector_limit(&xor3), Err(Error::NotSeparable)));
    }

    #[test]
    fn exact_series_fit() {
        let times: Vec<f64> = (1..=2000).map(|i| 10.0 + i as f64).collect();
        let trace = LinearFlowTrace {
            flow: LinearFlow::Gd,
            rho: times.iter().map(|t| 3.0 * t.ln()).collect(),
            eps: times.iter().map(|t| 0.5 / t.ln()).collect(),
            max_exp_term: times.iter().map(|t| 1.0 / t).collect(),
            v: vec![vec![1.0, 0.0]; times.len()],
            times,
            reference: vec![1.0, 0.0],
            restarts: 0,
        };
        let fit = fit_rate(&trace, RateModel::RhoLog, Some((0.0, 1e9))).unwrap();
        assert!((fit.constant - 3.0).abs() < 1e-6 && (fit.r_squared - 1.0).abs() < 1e-12);
        let fit = fit_rate(&trace, RateModel::ErrInvLog, Some((0.0, 1e9))).unwrap();
        assert!((fit.constant - 0.5).abs() < 1e-9);
        let fit = fit_rate(&trace, RateModel::ExpTerm, Some((0.0, 1e9))).unwrap();
        assert!((fit.constant - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_fit_rejected() {
        let times: Vec<f64> = (1..=2000).map(|i| 10.0 + i as f64).collect();
        let trace = LinearFlowTrace {
            flow: LinearFlow::Gd,
            rho: vec![2.0; times.len()],
            eps: vec![0.1; times.len()],
            max_exp_term: vec![0.1; times.len()],
            v: vec![vec![1.0, 0.0]; times.len()],
            times,
            reference: vec![1.0, 0.0],
            restarts: 0,
        };
        assert!(matches!(fit_rate(&trace, RateModel::RhoLog, Some((0.0, 1e9))), Err(Error::Fit(_))));
        assert!(matches!(fit_rate(&trace, RateModel::RhoLog, Some((0.0, 20.0))), Err(Error::Fit(_))));
    }

    #[test]
    fn aligned_start_is_stationary() {
        let (data, _) = single_support_vector_instance(0.1);
        let cfg = LinearFlowConfig { steps: 2000, record_every: 10, ..LinearFlowConfig::default() };
        for flow in [LinearFlow::Gd, LinearFlow::Wn] {
            let trace = run_linear(flow, &data, &[1.0, 0.0], &cfg).unwrap();
            assert!(trace.v.iter().all(|v| v == &vec![1.0, 0.0]));
        }
    }

    #[test]
    fn symmetric_support_vectors_converge_to_bisector() {
        let a = 0.6f64;
        let data =
            ClassificationDataset::new(vec![vec![a.cos(), a.sin()], vec![a.cos(), -a.sin()]], vec![1.0, 1.0]).unwrap();
        let cfg = LinearFlowConfig { steps: 200_000, record_every: 1000, ..LinearFlowConfig::default() };
        let trace = run_linear_wn(&data, &[0.0, 1.0], &cfg).unwrap();
        assert!(angle(trace.final_v(), &[1.0, 0.0]) < 1e-6);
        let trace = run_linear_gd(&data, &[0.0, 1.0], &cfg).unwrap();
        assert!(angle(trace.final_v(), &[1.0, 0.0]) < 1e-2);
        assert!(trace.v.iter().all(|v| (norm2(v) - 1.0).abs() < 1e-6));
    }
}
