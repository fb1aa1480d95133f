//! Margin maximization through a sequence of constrained minimizations.
//!
//! For each scale ρ of an increasing schedule, the unit-norm directions `V_k`
//! minimize `Σ_n exp(−y_n ρ f̃(V; x_n))` with every `ρ_k = ρ^{1/K}`. As ρ grows
//! the normalized margin of the minimizer approaches the maximum margin.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{log_loss_and_descent, margin, ClassificationDataset, TangentProjector};
use crate::linalg::{norm2, Matrix};
use crate::net::{ArchitectureSpec, Network, Workspace};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerConfig {
    /// Stop once the tangent gradient of `log L` has norm at most this.
    pub tol: f64,
    pub max_iters: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self { tol: 1e-7, max_iters: 100_000, armijo: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginSchedule {
    pub rhos: Vec<f64>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub inner: InnerConfig,
}

fn default_p() -> f64 {
    2.0
}

impl MarginSchedule {
    /// `lo, lo·ratio, …` up to and including `hi` (within rounding).
    pub fn geometric(lo: f64, hi: f64, ratio: f64, p: f64) -> Result<Self> {
        if !(lo > 0.0) || !(hi >= lo) || !(ratio > 1.0) {
            return Err(Error::Spec(format!("bad geometric schedule {lo}:{hi}:{ratio}")));
        }
        let mut rhos = vec![lo];
        while rhos.last().unwrap() * ratio <= hi * (1.0 + 1e-12) {
            rhos.push(rhos.last().unwrap() * ratio);
        }
        let s = Self { rhos, p, inner: InnerConfig::default() };
        s.validate()?;
        Ok(s)
    }

    /// The default `1, 2, 4, …, 64`.
    pub fn doubling() -> Self {
        Self::geometric(1.0, 64.0, 2.0, 2.0).expect("valid default schedule")
    }

    pub fn validate(&self) -> Result<()> {
        if self.rhos.is_empty() {
            return Err(Error::Spec("empty rho schedule".into()));
        }
        if self.rhos.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::Spec("rho values must be positive and finite".into()));
        }
        if self.rhos.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Spec("rho schedule must be strictly increasing".into()));
        }
        if !(self.p >= 1.0) {
            return Err(Error::Spec(format!("norm order must be >= 1, got {}", self.p)));
        }
        Ok(())
    }
}

/// Result of one inner solve.
#[derive(Clone, Debug)]
pub struct InnerSolution {
    /// Network holding the unit-norm directions `V_k`.
    pub directions: Network,
    pub rho: f64,
    /// Normalized margin `min_n y_n f̃(x_n)`.
    pub margin: f64,
    /// Final tangent-gradient norm of `log L`.
    pub residual: f64,
    pub iterations: usize,
}

/// Unit `p`-norm copy of every layer.
pub fn normalize_layers(net: &Network, p: f64) -> Result<Network> {
    let mut layers = Vec::with_capacity(net.layer_count());
    for (k, w) in net.layers().iter().enumerate() {
        let n = w.norm_p(p);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegenerateLayer { layer: k });
        }
        layers.push(w.scaled(1.0 / n));
    }
    net.with_layers(layers)
}

/// Margin of the normalized network `f̃`.
pub fn normalized_margin(net: &Network, data: &ClassificationDataset, p: f64) -> Result<f64> {
    Ok(margin(&normalize_layers(net, p)?, data))
}

struct Objective<'a> {
    data: &'a ClassificationDataset,
    layer_scale: f64,
    p: f64,
}

impl Objective<'_> {
    fn scaled(&self, v: &Network) -> Network {
        let layers = v.layers().iter().map(|m| m.scaled(self.layer_scale)).collect();
        v.with_layers(layers).expect("same shapes")
    }

    fn value(&self, v: &Network) -> f64 {
        crate::flow::log_exp_loss(&self.scaled(v), self.data)
    }

    /// `log L` and the projected descent direction with respect to `V`.
    fn descent(&self, v: &Network) -> Result<(f64, Vec<f64>)> {
        let (value, mut dir) = log_loss_and_descent(&self.scaled(v), self.data)?;
        for (k, range) in v.layer_ranges().into_iter().enumerate() {
            let proj = TangentProjector::new(v.layer(k).as_slice(), self.p)?;
            let block = &mut dir[range];
            block.iter_mut().for_each(|g| *g *= self.layer_scale);
            proj.apply_in_place(block);
        }
        Ok((value, dir))
    }

    fn retract(&self, v: &Network, dir: &[f64], alpha: f64) -> Result<Network> {
        let mut params = v.params();
        crate::linalg::axpy(&mut params, alpha, dir);
        normalize_layers(&v.with_params(&params)?, self.p)
    }
}

/// Minimize the exponential loss over unit-norm directions at fixed ρ by
/// Riemannian gradient descent on `log L` with Armijo backtracking. `net`
/// supplies the warm start and only its directions matter.
pub fn constrained_minimize_at_rho(
    net: &Network,
    data: &ClassificationDataset,
    rho: f64,
    p: f64,
    config: &InnerConfig,
) -> Result<InnerSolution> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Spec(format!("rho must be positive, got {rho}")));
    }
    if data.dim() != net.input_dim() {
        return Err(Error::Shape { expected: net.input_dim(), got: data.dim() });
    }
    let obj = Objective { data, layer_scale: rho.powf(1.0 / net.layer_count() as f64), p };
    let mut v = normalize_layers(net, p)?;
    let (mut value, mut dir) = obj.descent(&v)?;
    let mut residual = norm2(&dir);
    let mut alpha = 1.0 / rho;
    let mut iterations = 0;
    while residual > config.tol && iterations < config.max_iters {
        iterations += 1;
        let sq = residual * residual;
        let mut accepted = None;
        let mut fallback = None;
        let mut a = alpha * 2.0;
        for _ in 0..80 {
            let cand = obj.retract(&v, &dir, a)?;
            let decrease = config.armijo * a * sq;
            if decrease > 1e-13 * value.abs().max(1.0) {
                let cv = obj.value(&cand);
                if cv <= value - decrease {
                    accepted = Some((cand, None, a));
                    break;
                }
            } else {
                // Loss differences are below rounding here; require the
                // tangent gradient to shrink by a fixed fraction instead, or
                // failing that, to shrink at all.
                let (cv, cdir) = obj.descent(&cand)?;
                let n = norm2(&cdir);
                if n <= (1.0 - config.armijo) * residual {
                    accepted = Some((cand, Some((cv, cdir)), a));
                    break;
                }
                if n < residual && fallback.is_none() {
                    fallback = Some((cand, Some((cv, cdir)), a));
                }
            }
            a *= 0.5;
        }
        let Some((cand, evaluated, a)) = accepted.or(fallback) else { break };
        alpha = a;
        v = cand;
        (value, dir) = match evaluated {
            Some(e) => e,
            None => obj.descent(&v)?,
        };
        residual = norm2(&dir);
    }
    if residual > config.tol {
        return Err(Error::NonConvergence { steps: iterations, residual });
    }
    let m = margin(&v, data);
    Ok(InnerSolution { directions: v, rho, margin: m, residual, iterations })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub seed: u64,
    pub starts: usize,
    pub iters: usize,
    /// Initial subgradient step; decays as `step / √k`.
    pub step: f64,
    /// Angular grid resolution for the exact two-dimensional linear oracle.
    pub resolution: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { seed: 0, starts: 64, iters: 4000, step: 0.1, resolution: 1e-4 }
    }
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub margin: f64,
    /// Unit-norm directions achieving `margin`.
    pub directions: Network,
    /// Exhaustive (true) or multi-start heuristic (a lower bound).
    pub exact: bool,
}

fn is_linear(net: &Network) -> bool {
    matches!(net.spec(), ArchitectureSpec::Dense { hidden, input_bias: false, .. } if hidden.is_empty())
}

/// Best normalized margin over the model class of `template`. Two-dimensional
/// linear models are searched exhaustively on an angular grid; anything else
/// uses seeded multi-start projected subgradient ascent on the min-margin.
pub fn oracle_max_margin(
    data: &ClassificationDataset,
    template: &Network,
    p: f64,
    config: &OracleConfig,
) -> Result<OracleResult> {
    if data.is_empty() {
        return Err(Error::NotSeparable);
    }
    if data.dim() != template.input_dim() {
        return Err(Error::Shape { expected: template.input_dim(), got: data.dim() });
    }
    let result = if is_linear(template) && data.dim() == 2 {
        let (m, v) = angular_brute_force(data, p, config.resolution);
        OracleResult { margin: m, directions: template.with_layers(vec![Matrix::from_vec(1, 2, v)])?, exact: true }
    } else {
        multi_start_ascent(data, template, p, config)?
    };
    if !(result.margin > 0.0) {
        return Err(Error::NotSeparable);
    }
    Ok(result)
}

/// Grid search over the unit `p`-circle followed by a finer grid around the
/// best cell.
pub fn angular_brute_force(data: &ClassificationDataset, p: f64, resolution: f64) -> (f64, Vec<f64>) {
    let z = data.signed_points();
    let eval = |theta: f64| {
        let (s, c) = theta.sin_cos();
        let n = crate::linalg::norm_p(&[c, s], p);
        let v = [c / n, s / n];
        let m = z.iter().map(|zn| v[0] * zn[0] + v[1] * zn[1]).fold(f64::INFINITY, f64::min);
        (m, theta)
    };
    let best_on = |lo: f64, step: f64, count: usize| {
        (0..count).map(|i| eval(lo + i as f64 * step)).fold((f64::NEG_INFINITY, 0.0), |b, c| if c.0 > b.0 { c } else { b })
    };
    let count = (std::f64::consts::TAU / resolution).ceil() as usize;
    let (_, theta) = best_on(0.0, std::f64::consts::TAU / count as f64, count);
    let fine = resolution / 1000.0;
    let (m, theta) = best_on(theta - resolution, fine, 2001);
    let (s, c) = theta.sin_cos();
    let n = crate::linalg::norm_p(&[c, s], p);
    (m, vec![c / n, s / n])
}

fn multi_start_ascent(
    data: &ClassificationDataset,
    template: &Network,
    p: f64,
    config: &OracleConfig,
) -> Result<OracleResult> {
    let mut best: Option<(f64, Network)> = None;
    let mut ws = Workspace::default();
    let mut grad = vec![0.0; template.param_len()];
    for s in 0..config.starts.max(1) {
        let mut rng = substream(config.seed, s as u64);
        let params: Vec<f64> = (0..template.param_len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let Ok(mut v) = normalize_layers(&template.with_params(&params)?, p) else { continue };
        let mut local = (margin(&v, data), v.clone());
        for k in 1..=config.iters {
            let (idx, _) = data
                .iter()
                .enumerate()
                .map(|(i, (x, y))| (i, y * v.eval_with(x, &mut ws)))
                .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
            grad.iter_mut().for_each(|g| *g = 0.0);
            v.accumulate_gradient(&data.points()[idx], data.labels()[idx], &mut grad, &mut ws);
            for (l, range) in v.layer_ranges().into_iter().enumerate() {
                let proj = TangentProjector::new(v.layer(l).as_slice(), p)?;
                proj.apply_in_place(&mut grad[range]);
            }
            let gn = norm2(&grad);
            if gn == 0.0 {
                break;
            }
            let step = config.step / (k as f64).sqrt() / gn;
            let mut params = v.params();
            crate::linalg::axpy(&mut params, step, &grad);
            match normalize_layers(&v.with_params(&params)?, p) {
                Ok(next) => v = next,
                Err(_) => break,
            }
            let m = margin(&v, data);
            if m > local.0 {
                local = (m, v.clone());
            }
        }
        if best.as_ref().is_none_or(|b| local.0 > b.0) {
            best = Some(local);
        }
    }
    let (m, directions) = best.ok_or(Error::NotSeparable)?;
    Ok(OracleResult { margin: m, directions, exact: false })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub p: f64,
    pub rhos: Vec<f64>,
    pub margins: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    pub oracle_margin: f64,
    pub oracle_exact: bool,
    /// `oracle − achieved` per ρ.
    pub gaps: Vec<f64>,
}

impl MarginReport {
    pub fn final_gap(&self) -> f64 {
        self.gaps.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Number of increases of the gap over the last half of the schedule,
    /// ignoring changes below `tol`.
    pub fn tail_inversions(&self, tol: f64) -> usize {
        let start = self.gaps.len() / 2;
        self.gaps[start..].windows(2).filter(|w| w[1] > w[0] + tol).count()
    }

    /// Gap non-increasing over the final half, up to changes of 1e-9.
    pub fn tail_monotone(&self) -> bool {
        self.tail_inversions(1e-9) == 0
    }
}

/// Warm-started inner solves along the schedule, compared against the oracle.
pub fn run_margin_sequence(
    net: &Network,
    data: &ClassificationDataset,
    schedule: &MarginSchedule,
    oracle: &OracleConfig,
) -> Result<MarginReport> {
    schedule.validate()?;
    let reference = oracle_max_margin(data, net, schedule.p, oracle)?;
    let mut report = MarginReport {
        p: schedule.p,
        rhos: Vec::new(),
        margins: Vec::new(),
        residuals: Vec::new(),
        iterations: Vec::new(),
        oracle_margin: reference.margin,
        oracle_exact: reference.exact,
        gaps: Vec::new(),
    };
    let mut current = net.clone();
    for &rho in &schedule.rhos {
        let sol = constrained_minimize_at_rho(&current, data, rho, schedule.p, &schedule.inner)?;
        report.rhos.push(rho);
        report.margins.push(sol.margin);
        report.residuals.push(sol.residual);
        report.iterations.push(sol.iterations);
        report.gaps.push(reference.margin - sol.margin);
        current = sol.directions;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::angle;
    use crate::net::Activation;

    fn linear(w: [f64; 2]) -> Network {
        Network::new(ArchitectureSpec::linear(2), Activation::Relu, vec![Matrix::from_vec(1, 2, w.to_vec())]).unwrap()
    }

    fn symmetric() -> ClassificationDataset {
        ClassificationDataset::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![1.0, -1.0]).unwrap()
    }

    #[test]
    fn symmetric_instance_any_rho() {
        for rho in [0.5, 1.0, 8.0, 64.0] {
            let sol = constrained_minimize_at_rho(&linear([0.3, 0.9]), &symmetric(), rho, 2.0, &InnerConfig::default())
                .unwrap();
            assert!(angle(sol.directions.layer(0).as_slice(), &[1.0, 0.0]) < 1e-6, "rho {rho}");
            assert!((sol.margin - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_sample_gives_its_direction() {
        let data = ClassificationDataset::new(vec![vec![3.0, 4.0]], vec![1.0]).unwrap();
        for rho in [1.0, 16.0] {
            let sol = constrained_minimize_at_rho(&linear([1.0, -1.0]), &data, rho, 2.0, &InnerConfig::default()).unwrap();
            assert!(angle(sol.directions.layer(0).as_slice(), &[0.6, 0.8]) < 1e-6);
        }
    }

    #[test]
    fn oracle_symmetric_and_scaling() {
        let o = oracle_max_margin(&symmetric(), &linear([1.0, 0.0]), 2.0, &OracleConfig::default()).unwrap();
        assert!(o.exact && (o.margin - 1.0).abs() < 1e-9);
        let data = ClassificationDataset::random_linear_separable(4, 10, 2, 0.1);
        let a = oracle_max_margin(&data, &linear([1.0, 0.0]), 2.0, &OracleConfig::default()).unwrap();
        let b = oracle_max_margin(&data.scaled(3.0), &linear([1.0, 0.0]), 2.0, &OracleConfig::default()).unwrap();
        assert!((b.margin - 3.0 * a.margin).abs() < 1e-8);
        assert!(angle(a.directions.layer(0).as_slice(), b.directions.layer(0).as_slice()) < 1e-6);
    }

    #[test]
    fn oracle_rejects_xor() {
        let xor = ClassificationDataset::new(
            vec![vec![1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0], vec![-1.0, 1.0]],
            vec![1.0, 1.0, -1.0, -1.0],
        )
        .unwrap();
        assert!(matches!(
            oracle_max_margin(&xor, &linear([1.0, 0.0]), 2.0, &OracleConfig::default()),
            Err(Error::NotSeparable)
        ));
    }

    #[test]
    fn heuristic_matches_brute_force_on_linear() {
        let data = ClassificationDataset::random_linear_separable(2, 10, 2, 0.1);
        let (exact, _) = angular_brute_force(&data, 2.0, 1e-4);
        let template = Network::new(
            ArchitectureSpec::Dense { input_dim: 2, hidden: vec![], input_bias: false },
            Activation::Relu,
            vec![Matrix::from_vec(1, 2, vec![1.0, 0.0])],
        )
        .unwrap();
        let cfg = OracleConfig { starts: 8, iters: 20_000, ..OracleConfig::default() };
        let h = multi_start_ascent(&data, &template, 2.0, &cfg).unwrap();
        assert!((h.margin - exact).abs() < 1e-4, "{} vs {exact}", h.margin);
    }

    #[test]
    fn already_optimal_has_no_gap() {
        let rep = run_margin_sequence(&linear([1.0, 0.0]), &symmetric(), &MarginSchedule::doubling(), &OracleConfig::default())
            .unwrap();
        assert!(rep.gaps.iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn schedule_validation() {
        assert_eq!(MarginSchedule::doubling().rhos, vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]);
        let bad = MarginSchedule { rhos: vec![1.0, 1.0], p: 2.0, inner: InnerConfig::default() };
        assert!(bad.validate().is_err());
        assert!(MarginSchedule::geometric(1.0, 4.0, 2.0, 0.5).is_err());
    }
}
