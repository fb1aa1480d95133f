//! Compositional and generic smooth targets, sup-norm error on fixed grids,
//! and shallow-versus-tree scaling sweeps at matched unit budgets.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{param_count, Activation, ArchitectureSpec, Network, Workspace, TREE_ARITY};
use crate::rng::substream;

/// Anything evaluable on `[−1, 1]ⁿ`.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
}

impl ScalarField for Network {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        Network::eval(self, x)
    }
}

/// A closure with a declared input dimension.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScalarField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    GenericSmooth,
    Compositional,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstituentFamily {
    /// Seeded sums of three Gaussian bumps, shifted and rescaled to span `[−1, 1]`.
    #[default]
    Bumps,
    /// `h(a, b) = (a + b) / 2` at every node.
    Average,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub input_dim: usize,
    #[serde(default = "default_arity")]
    pub arity: usize,
    /// Smoothness proxy; larger values force wider, smoother bumps.
    #[serde(default = "default_smoothness")]
    pub smoothness: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub family: ConstituentFamily,
}

fn default_arity() -> usize {
    TREE_ARITY
}

fn default_smoothness() -> u32 {
    2
}

impl TargetSpec {
    pub fn compositional(input_dim: usize, seed: u64) -> Self {
        Self {
            kind: TargetKind::Compositional,
            input_dim,
            arity: TREE_ARITY,
            smoothness: default_smoothness(),
            seed,
            family: ConstituentFamily::Bumps,
        }
    }

    pub fn generic(input_dim: usize, smoothness: u32, seed: u64) -> Self {
        Self { kind: TargetKind::GenericSmooth, smoothness, ..Self::compositional(input_dim, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.arity != TREE_ARITY {
            return Err(Error::Spec(format!("only binary constituents are supported, got arity {}", self.arity)));
        }
        if self.smoothness == 0 {
            return Err(Error::Spec("smoothness must be a positive integer".into()));
        }
        match self.kind {
            TargetKind::Compositional if self.input_dim < 2 || !self.input_dim.is_power_of_two() => {
                Err(Error::Spec(format!("compositional targets need n a power of 2, got {}", self.input_dim)))
            }
            _ if self.input_dim == 0 => Err(Error::Spec("input dimension must be positive".into())),
            _ => Ok(()),
        }
    }

    /// Lower end of the bump-width range.
    fn min_width(&self) -> f64 {
        0.3 + 0.35 * (1.0 - 1.0 / self.smoothness as f64)
    }
}

const BUMPS: usize = 3;
const MAX_WIDTH: f64 = 1.0;

/// `scale · (Σ c_i exp(−‖x − μ_i‖² / (2 s_i²)) − offset)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpSum {
    pub coefficients: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
    pub widths: Vec<f64>,
    pub offset: f64,
    pub scale: f64,
}

impl BumpSum {
    fn random<R: Rng + ?Sized>(dim: usize, min_width: f64, width_factor: f64, rng: &mut R) -> Self {
        let coefficients = (0..BUMPS).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let centers = (0..BUMPS).map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect();
        let widths = (0..BUMPS).map(|_| width_factor * rng.random_range(min_width..=MAX_WIDTH)).collect();
        Self { coefficients, centers, widths, offset: 0.0, scale: 1.0 }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((c, mu), w) in self.coefficients.iter().zip(&self.centers).zip(&self.widths) {
            let r2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
            s += c * (-r2 / (2.0 * w * w)).exp();
        }
        self.scale * (s - self.offset)
    }

    /// Shift and rescale so the values over `points` span exactly `[−1, 1]`.
    fn normalize_on(&mut self, points: &[Vec<f64>]) {
        self.offset = 0.0;
        self.scale = 1.0;
        let (lo, hi) = points.iter().map(|p| self.eval(p)).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
        if hi > lo {
            self.offset = 0.5 * (hi + lo);
            self.scale = 2.0 / (hi - lo);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constituent {
    Bumps(BumpSum),
    Average,
}

impl Constituent {
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        match self {
            Constituent::Bumps(h) => h.eval(&[a, b]),
            Constituent::Average => 0.5 * (a + b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Evaluator {
    /// `levels[l][j]` combines outputs `2j, 2j+1` of level `l − 1` (inputs at `l = 0`).
    Tree { levels: Vec<Vec<Constituent>> },
    Generic { bumps: BumpSum },
}

/// A seeded target on `[−1, 1]ⁿ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetFn {
    spec: TargetSpec,
    evaluator: Evaluator,
}

impl TargetFn {
    pub fn spec(&self) -> &TargetSpec {
        &self.spec
    }

    /// Constituent `index` of tree level `level` (0 = nearest the inputs).
    pub fn constituent(&self, level: usize, index: usize) -> Option<&Constituent> {
        match &self.evaluator {
            Evaluator::Tree { levels } => levels.get(level).and_then(|l| l.get(index)),
            Evaluator::Generic { .. } => None,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match &self.evaluator {
            Evaluator::Generic { bumps } => bumps.eval(x),
            Evaluator::Tree { levels } => {
                let mut buf: Vec<f64> = x.to_vec();
                for level in levels {
                    for (j, h) in level.iter().enumerate() {
                        buf[j] = h.eval(buf[2 * j], buf[2 * j + 1]);
                    }
                    buf.truncate(level.len());
                }
                buf[0]
            }
        }
    }
}

impl ScalarField for TargetFn {
    fn dim(&self) -> usize {
        self.spec.input_dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.evaluate(x)
    }
}

/// Resolution of the grid on which bivariate constituents are normalized.
const CONSTITUENT_GRID: usize = 101;
/// Points used to normalize generic targets of dimension above three.
const GENERIC_NORMALIZATION_POINTS: usize = 4096;

pub fn make_target(spec: &TargetSpec) -> Result<TargetFn> {
    spec.validate()?;
    let mut rng = substream(spec.seed, 0);
    let evaluator = match spec.kind {
        TargetKind::Compositional => {
            let grid = SupGrid::Tensor { per_axis: CONSTITUENT_GRID }.points(2);
            let mut levels = Vec::new();
            let mut nodes = spec.input_dim;
            while nodes > 1 {
                nodes /= TREE_ARITY;
                let level = (0..nodes)
                    .map(|_| match spec.family {
                        ConstituentFamily::Average => Constituent::Average,
                        ConstituentFamily::Bumps => {
                            let mut h = BumpSum::random(2, spec.min_width(), 1.0, &mut rng);
                            h.normalize_on(&grid);
                            Constituent::Bumps(h)
                        }
                    })
                    .collect();
                levels.push(level);
            }
            Evaluator::Tree { levels }
        }
        TargetKind::GenericSmooth => {
            let n = spec.input_dim;
            // Widths grow like √(n/2) so a bump covers a comparable share of the cube.
            let factor = (n as f64 / TREE_ARITY as f64).sqrt();
            let mut bumps = BumpSum::random(n, spec.min_width(), factor, &mut rng);
            let grid = if n <= 3 {
                SupGrid::Tensor { per_axis: 21 }
            } else {
                SupGrid::QuasiRandom { count: GENERIC_NORMALIZATION_POINTS, seed: spec.seed }
            };
            bumps.normalize_on(&grid.points(n));
            Evaluator::Generic { bumps }
        }
    };
    Ok(TargetFn { spec: spec.clone(), evaluator })
}

/// Evaluation points for the sup norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupGrid {
    /// `per_axis` equispaced values per coordinate, endpoints included.
    Tensor { per_axis: usize },
    /// Additive-recurrence low-discrepancy points with a seeded offset.
    QuasiRandom { count: usize, seed: u64 },
}

impl SupGrid {
    /// `21ⁿ` tensor grid for `n ≤ 3`, otherwise `10⁵` quasi-random points.
    pub fn default_for(n: usize, seed: u64) -> Self {
        if n <= 3 {
            SupGrid::Tensor { per_axis: 21 }
        } else {
            SupGrid::QuasiRandom { count: 100_000, seed }
        }
    }

    pub fn points(&self, n: usize) -> Vec<Vec<f64>> {
        match *self {
            SupGrid::Tensor { per_axis } => {
                let k = per_axis.max(1);
                let total = k.pow(n as u32);
                let coord = |i: usize| if k == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (k - 1) as f64 };
                (0..total)
                    .map(|mut idx| {
                        let mut p = vec![0.0; n];
                        for c in p.iter_mut().rev() {
                            *c = coord(idx % k);
                            idx /= k;
                        }
                        p
                    })
                    .collect()
            }
            SupGrid::QuasiRandom { count, seed } => {
                let alpha = recurrence_steps(n);
                let mut rng = substream(seed, 0x5eed);
                let offset: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                (1..=count)
                    .map(|i| {
                        alpha
                            .iter()
                            .zip(&offset)
                            .map(|(a, o)| 2.0 * (o + i as f64 * a).fract() - 1.0)
                            .collect()
                    })
                    .collect()
            }
        }
    }
}

/// `α_j = φ_n^{−j}` where `φ_n` is the positive root of `x^{n+1} = x + 1`.
fn recurrence_steps(n: usize) -> Vec<f64> {
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (n as f64 + 1.0));
    }
    (1..=n).map(|j| phi.powi(-(j as i32)).fract()).collect()
}

/// `max_x |f(x) − g(x)|` over precomputed grid points, a lower bound on the
/// true sup distance.
pub fn sup_error(f: &dyn ScalarField, g: &dyn ScalarField, points: &[Vec<f64>]) -> Result<f64> {
    if f.dim() != g.dim() {
        return Err(Error::Shape { expected: f.dim(), got: g.dim() });
    }
    if let Some(p) = points.iter().find(|p| p.len() != f.dim()) {
        return Err(Error::Shape { expected: f.dim(), got: p.len() });
    }
    Ok(points.iter().map(|x| (f.eval(x) - g.eval(x)).abs()).fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub train_points: usize,
    pub validation_points: usize,
    /// Validation sup error is checked every this many steps.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            learning_rate: 1e-2,
            momentum: 0.9,
            train_points: 1000,
            validation_points: 500,
            eval_every: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedNet {
    /// The iterate with the smallest validation sup error.
    pub net: Network,
    pub validation_sup: f64,
    /// Training MSE of the returned iterate.
    pub train_mse: f64,
    /// Training loss at every step.
    pub loss_trace: Vec<f64>,
    pub steps: usize,
}

fn uniform_points(seed: u64, stream: u64, count: usize, n: usize) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, stream);
    (0..count).map(|_| (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect()
}

fn mse_and_grad(net: &Network, xs: &[Vec<f64>], ys: &[f64], grad: &mut [f64], ws: &mut Workspace) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let inv = 1.0 / xs.len().max(1) as f64;
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let r = net.eval_with(x, ws) - y;
        loss += 0.5 * r * r;
        if r != 0.0 {
            net.accumulate_gradient(x, r * inv, grad, ws);
        }
    }
    loss * inv
}

/// Full-batch momentum descent on the squared loss over a seeded uniform
/// sample of `[−1, 1]ⁿ`, starting from a zero output layer. A loss increase rejects the step, halves the step
/// size and clears the velocity.
pub fn train_to_target(arch: &ArchitectureSpec, target: &dyn ScalarField, config: &TrainConfig) -> Result<TrainedNet> {
    let n = arch.input_dim();
    if n != target.dim() {
        return Err(Error::Shape { expected: target.dim(), got: n });
    }
    let mut net = Network::random(arch.clone(), Activation::Relu, &mut substream(config.seed, 1))?;
    // The output layer starts at zero, so training begins from the zero function.
    if let Some(last) = net.layers().last() {
        let zero = crate::linalg::Matrix::zeros(last.rows(), last.cols());
        net.set_layer(net.layer_count() - 1, zero)?;
    }
    let xs = uniform_points(config.seed, 2, config.train_points, n);
    let ys: Vec<f64> = xs.iter().map(|x| target.eval(x)).collect();
    let vx = uniform_points(config.seed, 3, config.validation_points, n);
    let vy: Vec<f64> = vx.iter().map(|x| target.eval(x)).collect();
    let mut ws = Workspace::default();
    let val_sup = |net: &Network, ws: &mut Workspace| {
        vx.iter().zip(&vy).map(|(x, y)| (net.eval_with(x, ws) - y).abs()).fold(0.0, f64::max)
    };

    let mut params = net.params();
    let mut grad = vec![0.0; params.len()];
    let mut velocity = vec![0.0; params.len()];
    let mut lr = config.learning_rate;
    let mut accepted_params = params.clone();
    let mut accepted_loss = f64::INFINITY;
    let mut best = (val_sup(&net, &mut ws), net.clone(), f64::NAN);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let loss = mse_and_grad(&net, &xs, &ys, &mut grad, &mut ws);
        if !loss.is_finite() {
            return Err(Error::Training { step, reason: format!("loss became {loss}") });
        }
        trace.push(loss);
        if step == 0 {
            best.2 = loss;
        }
        if loss > accepted_loss {
            params.copy_from_slice(&accepted_params);
            velocity.iter_mut().for_each(|v| *v = 0.0);
            lr *= 0.5;
            net.set_params(&params)?;
            continue;
        }
        accepted_loss = loss;
        accepted_params.copy_from_slice(&params);
        if step % config.eval_every.max(1) == 0 {
            let v = val_sup(&net, &mut ws);
            if v < best.0 {
                best = (v, net.clone(), loss);
            }
        }
        for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            *v = config.momentum * *v - lr * g;
            *p += *v;
        }
        net.set_params(&params)?;
    }
    let final_loss = mse_and_grad(&net, &xs, &ys, &mut grad, &mut ws);
    if final_loss.is_finite() {
        let v = val_sup(&net, &mut ws);
        if v < best.0 {
            best = (v, net.clone(), final_loss);
        }
    }
    let (validation_sup, net, _) = best;
    let train_mse = 2.0 * mse_and_grad(&net, &xs, &ys, &mut grad, &mut ws);
    Ok(TrainedNet { net, validation_sup, train_mse, loss_trace: trace, steps: config.steps })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Shallow,
    Deep,
}

impl ArchKind {
    pub fn label(self) -> &'static str {
        match self {
            ArchKind::Shallow => "shallow",
            ArchKind::Deep => "deep",
        }
    }

    /// Architecture with (at most) `budget` hidden units. The tree gets
    /// `⌊budget / (n − 1)⌋` units per node.
    pub fn architecture(self, n: usize, budget: usize) -> ArchitectureSpec {
        match self {
            ArchKind::Shallow => ArchitectureSpec::Shallow { input_dim: n, units: budget },
            ArchKind::Deep => ArchitectureSpec::BinaryTree { input_dim: n, units_per_node: budget / (n - 1).max(1) },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub arch: ArchKind,
    pub n: usize,
    pub d: usize,
    pub m: u32,
    pub budget: usize,
    pub units: usize,
    pub params: usize,
    pub seed: u64,
    pub sup_error: f64,
    pub train_mse: f64,
    pub steps: usize,
    /// Wall time; only filled in when timing is requested.
    pub seconds: Option<f64>,
    /// Training failure, if the row did not complete.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub arch: ArchKind,
    pub rows: Vec<ScalingRow>,
}

impl ScalingCurve {
    /// Median sup error over seeds at each budget, ignoring failed rows.
    pub fn medians(&self) -> Vec<(usize, f64)> {
        let mut budgets: Vec<usize> = self.rows.iter().map(|r| r.budget).collect();
        budgets.dedup();
        budgets
            .into_iter()
            .map(|b| {
                let errs: Vec<f64> =
                    self.rows.iter().filter(|r| r.budget == b && r.error.is_none()).map(|r| r.sup_error).collect();
                (b, crate::langevin::median(&errs))
            })
            .collect()
    }

    /// Number of increases of the median error along the budget axis.
    pub fn inversions(&self) -> usize {
        self.medians().windows(2).filter(|w| w[1].1 > w[0].1).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub grid: Option<SupGrid>,
    pub grid_seed: u64,
    pub timing: bool,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            budgets: vec![16, 32, 64, 128],
            seeds: (0..5).collect(),
            train: TrainConfig::default(),
            grid: None,
            grid_seed: 0,
            timing: false,
        }
    }
}

/// Train a shallow net and a tree for every (budget, seed) and measure sup
/// errors on one shared grid. Rows run in parallel and come back sorted by
/// budget and seed.
pub fn run_scaling_experiment(spec: &TargetSpec, config: &ScalingConfig) -> Result<(ScalingCurve, ScalingCurve)> {
    if config.budgets.is_empty() || config.seeds.is_empty() {
        return Err(Error::Spec("budgets and seeds must be nonempty".into()));
    }
    let target = make_target(spec)?;
    let n = spec.input_dim;
    let grid = config.grid.unwrap_or_else(|| SupGrid::default_for(n, config.grid_seed));
    let points = grid.points(n);
    let mut jobs = Vec::new();
    for kind in [ArchKind::Shallow, ArchKind::Deep] {
        for &b in &config.budgets {
            for &s in &config.seeds {
                jobs.push((kind, b, s));
            }
        }
    }
    let mut rows: Vec<ScalingRow> = jobs
        .par_iter()
        .map(|&(kind, budget, seed)| {
            let arch = kind.architecture(n, budget);
            let start = Instant::now();
            let train = TrainConfig { seed, ..config.train.clone() };
            let mut row = ScalingRow {
                arch: kind,
                n,
                d: spec.arity,
                m: spec.smoothness,
                budget,
                units: arch.unit_count(),
                params: param_count(&arch).unwrap_or(0),
                seed,
                sup_error: f64::NAN,
                train_mse: f64::NAN,
                steps: 0,
                seconds: None,
                error: None,
            };
            match train_to_target(&arch, &target, &train)
                .and_then(|t| Ok((sup_error(&target, &t.net, &points)?, t)))
            {
                Ok((err, t)) => {
                    row.sup_error = err;
                    row.train_mse = t.train_mse;
                    row.steps = t.steps;
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            if config.timing {
                row.seconds = Some(start.elapsed().as_secs_f64());
            }
            row
        })
        .collect();
    rows.sort_by_key(|r| (r.arch, r.budget, r.seed));
    let (shallow, deep): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r.arch == ArchKind::Shallow);
    Ok((ScalingCurve { arch: ArchKind::Shallow, rows: shallow }, ScalingCurve { arch: ArchKind::Deep, rows: deep }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn averaging_tree() {
        let spec = TargetSpec { family: ConstituentFamily::Average, ..TargetSpec::compositional(4, 0) };
        let f = make_target(&spec).unwrap();
        assert_eq!(f.evaluate(&[1.0, 1.0, 1.0, 1.0]), 1.0);
        assert_eq!(f.evaluate(&[1.0, 0.0, 0.0, -1.0]), 0.0);
    }

    #[test]
    fn tree_matches_manual_composition() {
        let f = make_target(&TargetSpec::compositional(4, 9)).unwrap();
        let h11 = f.constituent(0, 0).unwrap().clone();
        let h12 = f.constituent(0, 1).unwrap().clone();
        let h2 = f.constituent(1, 0).unwrap().clone();
        let manual = |x: &[f64]| h2.eval(h11.eval(x[0], x[1]), h12.eval(x[2], x[3]));
        for p in (SupGrid::QuasiRandom { count: 500, seed: 1 }).points(4) {
            assert!((f.evaluate(&p) - manual(&p)).abs() <= 1e-14);
        }
        assert!(f.constituent(2, 0).is_none());
    }

    #[test]
    fn targets_are_deterministic_and_bounded() {
        for spec in [TargetSpec::compositional(8, 3), TargetSpec::generic(8, 2, 3), TargetSpec::generic(2, 4, 3)] {
            let a = make_target(&spec).unwrap();
            let b = make_target(&spec).unwrap();
            for p in (SupGrid::QuasiRandom { count: 200, seed: 2 }).points(spec.input_dim) {
                assert_eq!(a.evaluate(&p).to_bits(), b.evaluate(&p).to_bits());
                assert!(a.evaluate(&p).abs() <= 1.5);
            }
        }
    }

    #[test]
    fn constituents_have_unit_sup() {
        let f = make_target(&TargetSpec::compositional(8, 5)).unwrap();
        let grid = SupGrid::Tensor { per_axis: CONSTITUENT_GRID }.points(2);
        let h = f.constituent(0, 2).unwrap();
        let m = grid.iter().map(|p| h.eval(p[0], p[1]).abs()).fold(0.0, f64::max);
        assert!((m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        assert!(make_target(&TargetSpec::compositional(6, 0)).is_err());
        assert!(make_target(&TargetSpec { arity: 3, ..TargetSpec::compositional(8, 0) }).is_err());
        assert!(make_target(&TargetSpec::generic(0, 1, 0)).is_err());
    }

    #[test]
    fn grids() {
        let t = SupGrid::Tensor { per_axis: 21 }.points(2);
        assert_eq!(t.len(), 441);
        assert_eq!(t[0], vec![-1.0, -1.0]);
        assert_eq!(t[440], vec![1.0, 1.0]);
        let q = SupGrid::QuasiRandom { count: 1000, seed: 4 }.points(8);
        assert!(q.iter().flatten().all(|x| (-1.0..=1.0).contains(x)));
        assert_eq!(q, SupGrid::QuasiRandom { count: 1000, seed: 4 }.points(8));
        assert_ne!(q, SupGrid::QuasiRandom { count: 1000, seed: 5 }.points(8));
    }

    #[test]
    fn sup_error_basics() {
        let f = make_target(&TargetSpec::compositional(4, 1)).unwrap();
        let pts = SupGrid::QuasiRandom { count: 2000, seed: 0 }.points(4);
        let copy = FnField { dim: 4, f: |x: &[f64]| f.evaluate(x) };
        assert_eq!(sup_error(&f, &copy, &pts).unwrap(), 0.0);
        let shifted = FnField { dim: 4, f: |x: &[f64]| f.evaluate(x) + 0.3 };
        assert!((sup_error(&f, &shifted, &pts).unwrap() - 0.3).abs() < 1e-12);
        let wrong = FnField { dim: 3, f: |_: &[f64]| 0.0 };
        assert!(sup_error(&f, &wrong, &pts).is_err());
    }

    #[test]
    fn relu_unit_represents_positive_part() {
        let spec = ArchitectureSpec::Shallow { input_dim: 1, units: 1 };
        let g = Network::new(
            spec,
            Activation::Relu,
            vec![Matrix::from_vec(1, 2, vec![1.0, 0.0]), Matrix::from_vec(1, 1, vec![1.0])],
        )
        .unwrap();
        let f = FnField { dim: 1, f: |x: &[f64]| x[0].max(0.0) };
        let pts = SupGrid::Tensor { per_axis: 2001 }.points(1);
        assert!(sup_error(&f, &g, &pts).unwrap() <= 1e-12);
    }

    #[test]
    fn zero_target_trains_to_zero() {
        let zero = FnField { dim: 2, f: |_: &[f64]| 0.0 };
        let cfg = TrainConfig::default();
        let t = train_to_target(&ArchitectureSpec::Shallow { input_dim: 2, units: 4 }, &zero, &cfg).unwrap();
        let pts = SupGrid::Tensor { per_axis: 21 }.points(2);
        assert!(sup_error(&zero, &t.net, &pts).unwrap() <= 1e-3);
    }

    #[test]
    fn one_unit_learns_a_ridge() {
        let w = [0.8, -0.6];
        let ridge = FnField { dim: 2, f: move |x: &[f64]| (w[0] * x[0] + w[1] * x[1]).max(0.0) };
        let cfg = TrainConfig { steps: 20_000, ..TrainConfig::default() };
        let arch = ArchitectureSpec::Shallow { input_dim: 2, units: 1 };
        let t = train_to_target(&arch, &ridge, &cfg).unwrap();
        let pts = SupGrid::Tensor { per_axis: 21 }.points(2);
        assert!(sup_error(&ridge, &t.net, &pts).unwrap() <= 1e-2);
    }

    #[test]
    fn training_is_reproducible() {
        let f = make_target(&TargetSpec::compositional(4, 2)).unwrap();
        let cfg = TrainConfig { steps: 300, train_points: 200, ..TrainConfig::default() };
        let arch = ArchitectureSpec::BinaryTree { input_dim: 4, units_per_node: 3 };
        let a = train_to_target(&arch, &f, &cfg).unwrap();
        let b = train_to_target(&arch, &f, &cfg).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn zero_budget_gives_zero_functions() {
        let spec = TargetSpec::compositional(4, 1);
        let cfg = ScalingConfig {
            budgets: vec![0],
            seeds: vec![0, 1],
            train: TrainConfig { steps: 10, ..TrainConfig::default() },
            grid: Some(SupGrid::QuasiRandom { count: 500, seed: 0 }),
            ..ScalingConfig::default()
        };
        let (s, d) = run_scaling_experiment(&spec, &cfg).unwrap();
        assert_eq!(s.rows.len(), 2);
        for (a, b) in s.rows.iter().zip(&d.rows) {
            assert_eq!(a.params, 0);
            assert_eq!(b.params, 0);
            assert_eq!(a.sup_error, b.sup_error);
        }
    }
}
