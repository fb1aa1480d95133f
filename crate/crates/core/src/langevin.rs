//! Noisy gradient dynamics on analytic two-dimensional potentials.
//!
//! Two samplers share one driver: SGDL (`w ← w − η∇L + √(2ηT) ξ`) and a
//! minibatch-noise surrogate that evaluates the gradient at a randomly
//! perturbed point. Both reflect at the walls of the potential's box, and the
//! post-burn-in visits are binned and compared with the Boltzmann density
//! `p ∝ exp(−L/T)`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded_rng, LabRng};

pub type Point = [f64; 2];
type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(Point) -> Point + Send + Sync>;
type BasinFn = Arc<dyn Fn(Point) -> Option<usize> + Send + Sync>;

/// Histogram resolution per axis.
pub const DEFAULT_BINS: usize = 120;
/// Default half-width of the square domain.
pub const DEFAULT_HALF_WIDTH: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flatness {
    Flat,
    Sharp,
    Regular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasinDescriptor {
    pub name: String,
    pub center: Point,
    pub depth: f64,
    pub flatness: Flatness,
    /// A chain is committed to this basin once it comes this close to the center.
    pub core_radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Bowl,
    DoubleWell,
    Wedge,
}

impl PotentialKind {
    pub fn build(self) -> Potential2D {
        match self {
            PotentialKind::Bowl => Potential2D::bowl(),
            PotentialKind::DoubleWell => Potential2D::double_well(),
            PotentialKind::Wedge => Potential2D::wedge(),
        }
    }
}

/// An analytic potential on the box `[lo, hi]²` with its exact gradient.
#[derive(Clone)]
pub struct Potential2D {
    name: String,
    lo: f64,
    hi: f64,
    value: ScalarFn,
    gradient: GradFn,
    basins: Vec<BasinDescriptor>,
    basin_of: Option<BasinFn>,
}

impl fmt::Debug for Potential2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential2D")
            .field("name", &self.name)
            .field("box", &(self.lo, self.hi))
            .field("basins", &self.basins)
            .finish()
    }
}

/// Softmin of the wedge branches.
const WEDGE_SMOOTHING: f64 = 0.05;
const WEDGE_SHARP: Point = [-0.5, 0.0];
const WEDGE_FLAT: Point = [0.5, 0.0];
const DOUBLE_WELL_TILT: f64 = 0.1;

impl Potential2D {
    pub fn custom(
        name: impl Into<String>,
        lo: f64,
        hi: f64,
        value: impl Fn(Point) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(Point) -> Point + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Spec(format!("bad domain box [{lo}, {hi}]")));
        }
        Ok(Self {
            name: name.into(),
            lo,
            hi,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            basins: Vec::new(),
            basin_of: None,
        })
    }

    /// Attach basin descriptors and the rule assigning a point to one.
    pub fn with_basins(
        mut self,
        basins: Vec<BasinDescriptor>,
        basin_of: impl Fn(Point) -> Option<usize> + Send + Sync + 'static,
    ) -> Self {
        self.basins = basins;
        self.basin_of = Some(Arc::new(basin_of));
        self
    }

    /// `½‖w‖²`.
    pub fn bowl() -> Self {
        Self::custom("bowl", -DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH, |w| 0.5 * (w[0] * w[0] + w[1] * w[1]), |w| w)
            .expect("valid box")
            .with_basins(
                vec![BasinDescriptor {
                    name: "bowl".into(),
                    center: [0.0, 0.0],
                    depth: 0.0,
                    flatness: Flatness::Regular,
                    core_radius: 0.5,
                }],
                |_| Some(0),
            )
    }

    /// `½(w₁² − 1)² + 0.1 w₁ + 2 w₂²`: two wells near `w₁ = ±1` separated by a
    /// barrier of about ½, the left one deeper.
    pub fn double_well() -> Self {
        let c = DOUBLE_WELL_TILT;
        let value = move |w: Point| 0.5 * (w[0] * w[0] - 1.0).powi(2) + c * w[0] + 2.0 * w[1] * w[1];
        let gradient = move |w: Point| [2.0 * w[0] * (w[0] * w[0] - 1.0) + c, 4.0 * w[1]];
        // Stationary points of the w₁ part solve 2w³ − 2w + c = 0.
        let roots = cubic_roots_near(&[-1.0, 1.0], c);
        let basins = vec![
            BasinDescriptor {
                name: "left".into(),
                center: [roots[0], 0.0],
                depth: value([roots[0], 0.0]),
                flatness: Flatness::Regular,
                core_radius: 0.5,
            },
            BasinDescriptor {
                name: "right".into(),
                center: [roots[1], 0.0],
                depth: value([roots[1], 0.0]),
                flatness: Flatness::Regular,
                core_radius: 0.5,
            },
        ];
        let barrier = cubic_roots_near(&[0.0], c)[0];
        Self::custom("double_well", -DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH, value, gradient)
            .expect("valid box")
            .with_basins(basins, move |w| Some(usize::from(w[0] > barrier)))
    }

    /// Softmin of a sharp quadratic `8‖w − c₁‖²` and a flat quartic
    /// `½‖w − c₂‖⁴`, both with minimum value 0.
    pub fn wedge() -> Self {
        let s = WEDGE_SMOOTHING;
        let branches = |w: Point| {
            let (a0, a1) = (w[0] - WEDGE_SHARP[0], w[1] - WEDGE_SHARP[1]);
            let (b0, b1) = (w[0] - WEDGE_FLAT[0], w[1] - WEDGE_FLAT[1]);
            let ra = a0 * a0 + a1 * a1;
            let rb = b0 * b0 + b1 * b1;
            (8.0 * ra, [16.0 * a0, 16.0 * a1], 0.5 * rb * rb, [2.0 * rb * b0, 2.0 * rb * b1])
        };
        let value = move |w: Point| {
            let (a, _, b, _) = branches(w);
            let m = a.min(b);
            m - s * ((-(a - m) / s).exp() + (-(b - m) / s).exp()).ln()
        };
        let gradient = move |w: Point| {
            let (a, ga, b, gb) = branches(w);
            let m = a.min(b);
            let ea = (-(a - m) / s).exp();
            let eb = (-(b - m) / s).exp();
            let (pa, pb) = (ea / (ea + eb), eb / (ea + eb));
            [pa * ga[0] + pb * gb[0], pa * ga[1] + pb * gb[1]]
        };
        let depth = value(WEDGE_FLAT);
        let basins = vec![
            BasinDescriptor {
                name: "flat".into(),
                center: WEDGE_FLAT,
                depth,
                flatness: Flatness::Flat,
                core_radius: 0.3,
            },
            BasinDescriptor {
                name: "sharp".into(),
                center: WEDGE_SHARP,
                depth: value(WEDGE_SHARP),
                flatness: Flatness::Sharp,
                core_radius: 0.1,
            },
        ];
        Self::custom("wedge", -DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH, value, gradient)
            .expect("valid box")
            .with_basins(basins, move |w| {
                let (a, _, b, _) = branches(w);
                Some(usize::from(a < b))
            })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn basins(&self) -> &[BasinDescriptor] {
        &self.basins
    }

    pub fn value(&self, w: Point) -> f64 {
        (self.value)(w)
    }

    pub fn gradient(&self, w: Point) -> Point {
        (self.gradient)(w)
    }

    pub fn basin_of(&self, w: Point) -> Option<usize> {
        self.basin_of.as_ref().and_then(|f| f(w))
    }

    pub fn contains(&self, w: Point) -> bool {
        w.iter().all(|&x| x >= self.lo && x <= self.hi)
    }

    /// Fold `x` back into `[lo, hi]` by mirror reflection.
    pub fn reflect(&self, w: Point) -> Point {
        w.map(|x| reflect_into(x, self.lo, self.hi))
    }
}

fn reflect_into(x: f64, lo: f64, hi: f64) -> f64 {
    if (lo..=hi).contains(&x) {
        return x;
    }
    if !x.is_finite() {
        return 0.5 * (lo + hi);
    }
    let width = hi - lo;
    let mut y = (x - lo).rem_euclid(2.0 * width);
    if y > width {
        y = 2.0 * width - y;
    }
    lo + y
}

/// Newton iterations for `2w³ − 2w + c = 0` from each start.
fn cubic_roots_near(starts: &[f64], c: f64) -> Vec<f64> {
    starts
        .iter()
        .map(|&s| {
            let mut w = s;
            for _ in 0..100 {
                let f = 2.0 * w * w * w - 2.0 * w + c;
                let d = 6.0 * w * w - 2.0;
                w -= f / d;
            }
            w
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    Sgdl,
    /// Gradient taken at `w + ζ`, `ζ` uniform in a disk of this radius; a
    /// surrogate for minibatch noise, with no thermal term.
    PerturbedSgd { radius: f64 },
}

impl Dynamics {
    pub fn label(&self) -> &'static str {
        match self {
            Dynamics::Sgdl => "sgdl",
            Dynamics::PerturbedSgd { .. } => "perturbed_sgd_surrogate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LangevinConfig {
    pub temperature: f64,
    pub eta: f64,
    pub steps: u64,
    pub burn_in: f64,
    pub seed: u64,
    pub dynamics: Dynamics,
    /// Starting point; defaults to the center of the potential's first basin.
    pub start: Option<Point>,
    pub bins: usize,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            eta: 1e-2,
            steps: 1_000_000,
            burn_in: 0.1,
            seed: 0,
            dynamics: Dynamics::Sgdl,
            start: None,
            bins: DEFAULT_BINS,
        }
    }
}

impl LangevinConfig {
    /// Perturbed-gradient defaults: a step near the stability edge of the sharp
    /// wedge basin and a disk of radius 0.1.
    pub fn perturbed() -> Self {
        Self { eta: 0.12, burn_in: 0.0, dynamics: Dynamics::PerturbedSgd { radius: 0.1 }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::Config { key: key.into(), message });
        if matches!(self.dynamics, Dynamics::Sgdl) && !(self.temperature > 0.0) {
            return bad("temperature", format!("must be positive, got {}", self.temperature));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return bad("eta", format!("must be positive, got {}", self.eta));
        }
        if !(0.0..=0.9).contains(&self.burn_in) {
            return bad("burn_in", format!("must lie in [0, 0.9], got {}", self.burn_in));
        }
        if self.bins == 0 {
            return bad("bins", "must be positive".into());
        }
        if let Dynamics::PerturbedSgd { radius } = self.dynamics {
            if !(radius >= 0.0) {
                return bad("dynamics.radius", format!("must be non-negative, got {radius}"));
            }
        }
        Ok(())
    }
}

/// One SGDL step `w − η∇L(w) + √(2ηT) ξ`, reflected into the box.
pub fn sgdl_step<R: Rng + ?Sized>(w: Point, potential: &Potential2D, config: &LangevinConfig, rng: &mut R) -> Point {
    let g = potential.gradient(w);
    let s = (2.0 * config.eta * config.temperature.max(0.0)).sqrt();
    let xi: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
    potential.reflect([w[0] - config.eta * g[0] + s * xi[0], w[1] - config.eta * g[1] + s * xi[1]])
}

/// One gradient step with the gradient taken at a uniformly perturbed point.
pub fn sgd_perturbed_step<R: Rng + ?Sized>(
    w: Point,
    potential: &Potential2D,
    config: &LangevinConfig,
    rng: &mut R,
) -> Point {
    let radius = match config.dynamics {
        Dynamics::PerturbedSgd { radius } => radius,
        Dynamics::Sgdl => 0.0,
    };
    let probe = if radius > 0.0 {
        let r = radius * rng.random::<f64>().sqrt();
        let (s, c) = (std::f64::consts::TAU * rng.random::<f64>()).sin_cos();
        [w[0] + r * c, w[1] + r * s]
    } else {
        w
    };
    let g = potential.gradient(probe);
    potential.reflect([w[0] - config.eta * g[0], w[1] - config.eta * g[1]])
}

/// Uniform `bins × bins` grid over a square box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Grid2D {
    pub fn for_potential(potential: &Potential2D, bins: usize) -> Self {
        let (lo, hi) = potential.domain();
        Self { lo, hi, bins }
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn center(&self, i: usize, j: usize) -> Point {
        let h = self.bin_width();
        [self.lo + (i as f64 + 0.5) * h, self.lo + (j as f64 + 0.5) * h]
    }

    /// Row-major index `i·bins + j` of the bin holding `w` (`i` along `w₁`).
    pub fn index(&self, w: Point) -> usize {
        let h = self.bin_width();
        let cell = |x: f64| (((x - self.lo) / h).floor().max(0.0) as usize).min(self.bins - 1);
        cell(w[0]) * self.bins + cell(w[1])
    }
}

/// Boltzmann density `exp(−L/T)/Z` at the bin centers, normalized to sum to one.
pub fn boltzmann_reference(potential: &Potential2D, temperature: f64, grid: &Grid2D) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Config { key: "temperature".into(), message: format!("must be positive, got {temperature}") });
    }
    let n = grid.bins;
    let energies: Vec<f64> =
        (0..n * n).map(|k| potential.value(grid.center(k / n, k % n)) / temperature).collect();
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = energies.iter().map(|e| (-(e - e_min)).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyHistogram {
    pub grid: Grid2D,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl OccupancyHistogram {
    pub fn new(grid: Grid2D) -> Self {
        Self { grid, counts: vec![0; grid.bins * grid.bins], total: 0 }
    }

    pub fn record(&mut self, w: Point) {
        self.counts[self.grid.index(w)] += 1;
        self.total += 1;
    }

    pub fn bin_size(&self) -> f64 {
        self.grid.bin_width()
    }

    /// Visit frequencies in row-major order.
    pub fn frequencies(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// Matrix form, one CSV row per `w₁` bin.
    pub fn to_csv_string(&self) -> String {
        let n = self.grid.bins;
        let f = self.frequencies();
        let mut out = String::new();
        for i in 0..n {
            let row: Vec<String> = f[i * n..(i + 1) * n].iter().map(|x| format!("{x:.9e}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasinReport {
    pub basin: String,
    pub flatness: Flatness,
    pub mass: f64,
    /// Changes of the committed basin over the whole run.
    pub crossings: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRun {
    pub potential: String,
    pub dynamics: String,
    pub config: LangevinConfig,
    pub histogram: OccupancyHistogram,
    pub basins: Vec<BasinReport>,
    pub mean: Point,
    /// Row-major 2×2 sample covariance after burn-in.
    pub covariance: [f64; 4],
    pub final_point: Point,
}

impl OccupancyRun {
    pub fn mass(&self, basin: &str) -> Option<f64> {
        self.basins.iter().find(|b| b.basin == basin).map(|b| b.mass)
    }

    pub fn total_crossings(&self) -> u64 {
        self.basins.iter().map(|b| b.crossings).sum()
    }

    /// TV distance of the visit histogram to the Boltzmann reference.
    pub fn tv_to_boltzmann(&self, potential: &Potential2D) -> Result<f64> {
        let p = boltzmann_reference(potential, self.config.temperature, &self.histogram.grid)?;
        Ok(total_variation(&self.histogram.frequencies(), &p))
    }
}

/// Run one chain and bin its post-burn-in visits.
pub fn run_occupancy(potential: &Potential2D, config: &LangevinConfig) -> Result<OccupancyRun> {
    config.validate()?;
    let mut rng: LabRng = seeded_rng(config.seed);
    let grid = Grid2D::for_potential(potential, config.bins);
    let mut hist = OccupancyHistogram::new(grid);
    let nb = potential.basins().len();
    let mut mass = vec![0u64; nb];
    let mut crossings = vec![0u64; nb];
    let mut w = config.start.or_else(|| potential.basins().first().map(|b| b.center)).unwrap_or([0.0, 0.0]);
    if !potential.contains(w) {
        return Err(Error::Config { key: "start".into(), message: "outside the domain box".into() });
    }
    let mut committed = committed_basin(potential, w, None);
    let burn = (config.burn_in * config.steps as f64).floor() as u64;
    let (mut s0, mut s1) = ([0.0; 2], [0.0; 3]);
    for step in 0..config.steps {
        w = match config.dynamics {
            Dynamics::Sgdl => sgdl_step(w, potential, config, &mut rng),
            Dynamics::PerturbedSgd { .. } => sgd_perturbed_step(w, potential, config, &mut rng),
        };
        let now = committed_basin(potential, w, committed);
        if let (Some(a), Some(b)) = (committed, now) {
            if a != b {
                crossings[b] += 1;
            }
        }
        committed = now;
        if step >= burn {
            hist.record(w);
            if let Some(b) = potential.basin_of(w) {
                mass[b] += 1;
            }
            s0[0] += w[0];
            s0[1] += w[1];
            s1[0] += w[0] * w[0];
            s1[1] += w[0] * w[1];
            s1[2] += w[1] * w[1];
        }
    }
    let n = hist.total.max(1) as f64;
    let mean = [s0[0] / n, s0[1] / n];
    let c01 = s1[1] / n - mean[0] * mean[1];
    let covariance = [s1[0] / n - mean[0] * mean[0], c01, c01, s1[2] / n - mean[1] * mean[1]];
    let basins = potential
        .basins()
        .iter()
        .enumerate()
        .map(|(i, b)| BasinReport { basin: b.name.clone(), flatness: b.flatness, mass: mass[i] as f64 / n, crossings: crossings[i] })
        .collect();
    Ok(OccupancyRun {
        potential: potential.name().to_string(),
        dynamics: config.dynamics.label().to_string(),
        config: config.clone(),
        histogram: hist,
        basins,
        mean,
        covariance,
        final_point: w,
    })
}

fn committed_basin(potential: &Potential2D, w: Point, previous: Option<usize>) -> Option<usize> {
    for (i, b) in potential.basins().iter().enumerate() {
        let d = ((w[0] - b.center[0]).powi(2) + (w[1] - b.center[1]).powi(2)).sqrt();
        if d <= b.core_radius {
            return Some(i);
        }
    }
    previous.or_else(|| potential.basin_of(w))
}

/// Independent chains in parallel; results in input order.
pub fn run_many(potential: &Potential2D, configs: &[LangevinConfig]) -> Result<Vec<OccupancyRun>> {
    configs.par_iter().map(|c| run_occupancy(potential, c)).collect()
}

/// Median of a slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
