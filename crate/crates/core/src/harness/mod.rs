//! Run configuration, dispatch to the experiment modules, artifact
//! persistence and exact replay.

pub mod artifacts;
pub mod normloss;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::approx::{make_target, run_scaling_experiment, ScalingConfig, ScalingCurve, TargetSpec};
use crate::error::{Error, Result};
use crate::flow::{run_flow, ClassificationDataset, FlowConfig, FlowKind};
use crate::langevin::{run_occupancy, Dynamics, LangevinConfig, PotentialKind};
use crate::linear::{fit_rate, run_linear, single_support_vector_instance, support_vector_limit, LinearFlow, LinearFlowConfig, RateModel};
use crate::margin::{normalized_margin, run_margin_sequence, MarginSchedule, OracleConfig};
use crate::net::{serialize, Activation, ArchitectureSpec, Network};
use crate::rng::substream;

pub use artifacts::{ArtifactSet, Manifest, FORMAT_VERSION, MANIFEST_FILE};
pub use normloss::{normalized_loss_experiment, NormalizedLossPoint, NormlossConfig, NormlossReport, Optimizer};

use artifacts::{csv_text, fmt_f64, json_text, sha256_hex};

/// Where a classification data set comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// CSV rows `label,x1,…,xd`.
    File { path: PathBuf },
    LinearSeparable { count: usize, dim: usize, gap: f64 },
    Blobs { count: usize, separation: f64, std: f64, margin: f64 },
    /// One positive sample at `e₁`.
    SingleSupportVector,
    /// `(+1, e₁)` and `(−1, −e₁)`.
    SymmetricPair,
    /// Single L2 support vector with a distinct L1 optimum.
    AsymmetricSupport,
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::LinearSeparable { count: 10, dim: 2, gap: 0.1 }
    }
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<ClassificationDataset> {
        match self {
            DataSource::File { path } => ClassificationDataset::load_csv(path),
            DataSource::LinearSeparable { count, dim, gap } => {
                Ok(ClassificationDataset::random_linear_separable(seed, *count, *dim, *gap))
            }
            DataSource::Blobs { count, separation, std, margin } => {
                Ok(ClassificationDataset::gaussian_blobs(seed, *count, *separation, *std, *margin))
            }
            DataSource::SingleSupportVector => Ok(single_support_vector_instance(0.0).0),
            DataSource::AsymmetricSupport => Ok(ClassificationDataset::asymmetric_support()),
            DataSource::SymmetricPair => {
                ClassificationDataset::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![1.0, -1.0])
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxParams {
    pub target: TargetSpec,
    pub scaling: ScalingConfig,
}

impl Default for ApproxParams {
    fn default() -> Self {
        Self { target: TargetSpec::compositional(8, 0), scaling: ScalingConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub dynamics: FlowKind,
    pub data: DataSource,
    pub architecture: ArchitectureSpec,
    pub activation: Activation,
    pub flow: FlowConfig,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            dynamics: FlowKind::WeightNorm,
            data: DataSource::default(),
            architecture: ArchitectureSpec::linear(2),
            activation: Activation::Relu,
            flow: FlowConfig { record_every: 100, ..FlowConfig::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearParams {
    pub flow: LinearFlow,
    pub data: DataSource,
    /// Start direction; by default `e₂` tilted toward `e₁` by `tilt` radians
    /// in two dimensions, a seeded random direction otherwise.
    pub v0: Option<Vec<f64>>,
    pub tilt: f64,
    pub config: LinearFlowConfig,
    pub fit_window: Option<(f64, f64)>,
}

impl Default for LinearParams {
    fn default() -> Self {
        Self {
            flow: LinearFlow::Gd,
            data: DataSource::SingleSupportVector,
            v0: None,
            tilt: 0.1,
            config: LinearFlowConfig { rho0: 1.0, ..LinearFlowConfig::default() },
            fit_window: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginParams {
    pub data: DataSource,
    pub architecture: ArchitectureSpec,
    pub activation: Activation,
    pub schedule: MarginSchedule,
    pub oracle: OracleConfig,
}

impl Default for MarginParams {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            architecture: ArchitectureSpec::linear(2),
            activation: Activation::Relu,
            schedule: MarginSchedule::doubling(),
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LangevinParams {
    pub potential: PotentialKind,
    pub sampler: LangevinConfig,
}

impl Default for LangevinParams {
    fn default() -> Self {
        Self { potential: PotentialKind::Wedge, sampler: LangevinConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Approx(ApproxParams),
    Flow(FlowParams),
    Linear(LinearParams),
    Langevin(LangevinParams),
    Margin(MarginParams),
    Normloss(NormlossConfig),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Approx(_) => "approx",
            Experiment::Flow(_) => "flow",
            Experiment::Linear(_) => "linear",
            Experiment::Langevin(_) => "langevin",
            Experiment::Margin(_) => "margin",
            Experiment::Normloss(_) => "normloss",
        }
    }

    /// Defaults for the named experiment.
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name {
            "approx" => Experiment::Approx(ApproxParams::default()),
            "flow" => Experiment::Flow(FlowParams::default()),
            "linear" => Experiment::Linear(LinearParams::default()),
            "langevin" => Experiment::Langevin(LangevinParams::default()),
            "margin" => Experiment::Margin(MarginParams::default()),
            "normloss" => Experiment::Normloss(NormlossConfig::default()),
            other => {
                return Err(Error::Config { key: "experiment".into(), message: format!("unknown experiment kind `{other}`") })
            }
        })
    }

    fn artifact_names(&self) -> &'static [&'static str] {
        match self {
            Experiment::Approx(_) => &["scaling.csv", "summary.json"],
            Experiment::Flow(_) => &["trace.csv", "summary.json", "final_network.txt"],
            Experiment::Linear(_) => &["trace.csv", "fits.json"],
            Experiment::Langevin(_) => &["histogram.csv", "basins.json"],
            Experiment::Margin(_) => &["margin.json"],
            Experiment::Normloss(_) => &["points.csv", "summary.json"],
        }
    }
}

fn default_format_version() -> u32 {
    FORMAT_VERSION
}

/// A complete, replayable description of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub experiment: Experiment,
}

impl RunConfig {
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        Self { format_version: FORMAT_VERSION, seed, out: None, experiment }
    }

    /// Parse JSON, reporting the path of the first offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::Config { key: if key.is_empty() || key == "." { "<root>".into() } else { key }, message: e.into_inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config {
                key: "format_version".into(),
                message: format!("unsupported version {}, expected {FORMAT_VERSION}", self.format_version),
            });
        }
        match &self.experiment {
            Experiment::Flow(p) => p.dynamics.validate(),
            Experiment::Margin(p) => p.schedule.validate(),
            Experiment::Langevin(p) => p.sampler.validate(),
            Experiment::Approx(p) => p.target.validate(),
            _ => Ok(()),
        }
    }

    /// Copy with every module-level seed tied to the run seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let seed = c.seed;
        match &mut c.experiment {
            Experiment::Approx(p) => {
                p.target.seed = seed;
                p.scaling.grid_seed = seed;
            }
            Experiment::Langevin(p) => p.sampler.seed = seed,
            Experiment::Margin(p) => p.oracle.seed = seed,
            Experiment::Normloss(p) => p.seed = seed,
            Experiment::Flow(_) | Experiment::Linear(_) => {}
        }
        c
    }

    /// Hash of the resolved configuration, output directory excluded.
    pub fn config_hash(&self) -> Result<String> {
        let mut c = self.resolved();
        c.out = None;
        Ok(sha256_hex(serde_json::to_string(&c)?.as_bytes()))
    }

    pub fn output_dir(&self) -> Result<PathBuf> {
        match &self.out {
            Some(p) => Ok(p.clone()),
            None => Ok(PathBuf::from("runs").join(format!("{}-{}", self.experiment.name(), &self.config_hash()?[..12]))),
        }
    }

    /// Human-readable plan: resolved configuration, destination and artifacts.
    pub fn plan(&self) -> Result<String> {
        let resolved = self.resolved();
        let mut s = String::new();
        s.push_str(&format!("experiment: {}\n", self.experiment.name()));
        s.push_str(&format!("seed: {}\n", self.seed));
        s.push_str(&format!("output: {}\n", self.output_dir()?.display()));
        s.push_str(&format!("config_hash: {}\n", self.config_hash()?));
        s.push_str(&format!("artifacts: {}, {MANIFEST_FILE}\n", self.experiment.artifact_names().join(", ")));
        s.push_str("config:\n");
        s.push_str(&serde_json::to_string_pretty(&resolved)?);
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub artifacts: ArtifactSet,
    pub manifest: Manifest,
}

/// Execute without touching the disk.
pub fn execute(config: &RunConfig) -> Result<(ArtifactSet, Manifest)> {
    config.validate()?;
    let resolved = config.resolved();
    let seed = resolved.seed;
    let artifacts = match &resolved.experiment {
        Experiment::Approx(p) => approx_artifacts(p)?,
        Experiment::Flow(p) => flow_artifacts(p, seed)?,
        Experiment::Linear(p) => linear_artifacts(p, seed)?,
        Experiment::Langevin(p) => langevin_artifacts(p)?,
        Experiment::Margin(p) => margin_artifacts(p, seed)?,
        Experiment::Normloss(p) => normloss_artifacts(p)?,
    };
    let mut stored = resolved.clone();
    stored.out = None;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        experiment: resolved.experiment.name().into(),
        seed,
        config_hash: config.config_hash()?,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        config: serde_json::to_value(&stored)?,
        artifacts: artifacts.entries(),
    };
    Ok((artifacts, manifest))
}

/// Execute and persist artifacts plus manifest.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let dir = config.output_dir()?;
    let (artifacts, manifest) = execute(config)?;
    artifacts.write_to(&dir, &manifest)?;
    Ok(RunOutcome { dir, artifacts, manifest })
}

/// Re-run the configuration stored in a manifest and check that every
/// artifact hashes identically.
pub fn replay(manifest_path: &Path, out: Option<PathBuf>) -> Result<RunOutcome> {
    let manifest = Manifest::load(manifest_path)?;
    let mut config: RunConfig = serde_json::from_value(manifest.config.clone())?;
    config.out = Some(out.unwrap_or_else(|| {
        manifest_path.parent().unwrap_or_else(|| Path::new(".")).join("replay")
    }));
    let outcome = run(&config)?;
    if outcome.manifest.artifacts != manifest.artifacts {
        let differing: Vec<String> = manifest
            .artifacts
            .iter()
            .filter(|a| !outcome.manifest.artifacts.contains(a))
            .map(|a| a.path.clone())
            .collect();
        return Err(Error::Replay(format!("artifacts differ: {}", differing.join(", "))));
    }
    Ok(outcome)
}

fn s(x: impl ToString) -> String {
    x.to_string()
}

fn approx_artifacts(p: &ApproxParams) -> Result<ArtifactSet> {
    make_target(&p.target)?;
    let (shallow, deep) = run_scaling_experiment(&p.target, &p.scaling)?;
    let header: Vec<String> =
        ["arch", "n", "d", "m", "N", "params", "seed", "sup_error", "train_mse", "steps", "seconds", "error"]
            .map(String::from)
            .to_vec();
    let rows: Vec<Vec<String>> = shallow
        .rows
        .iter()
        .chain(&deep.rows)
        .map(|r| {
            vec![
                s(r.arch.label()),
                s(r.n),
                s(r.d),
                s(r.m),
                s(r.units),
                s(r.params),
                s(r.seed),
                fmt_f64(r.sup_error),
                fmt_f64(r.train_mse),
                s(r.steps),
                r.seconds.map(fmt_f64).unwrap_or_else(|| "NA".into()),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let medians = |c: &ScalingCurve| c.medians().into_iter().map(|(b, e)| json!({"budget": b, "median_sup_error": e})).collect::<Vec<_>>();
    let summary = json!({
        "target": p.target,
        "shallow": medians(&shallow),
        "deep": medians(&deep),
        "shallow_inversions": shallow.inversions(),
        "deep_inversions": deep.inversions(),
    });
    let mut a = ArtifactSet::default();
    a.add("scaling.csv", csv_text(&header, &rows)?);
    a.add("summary.json", json_text(&summary)?);
    Ok(a)
}

fn flow_artifacts(p: &FlowParams, seed: u64) -> Result<ArtifactSet> {
    p.dynamics.validate()?;
    let data = p.data.load(seed)?;
    let net = Network::random(p.architecture.clone(), p.activation, &mut substream(seed, 11))?;
    let k = net.layer_count();
    let trace = run_flow(p.dynamics, net, &data, &p.flow)?;
    let mut header: Vec<String> = ["step", "time", "loss", "margin", "rho_product", "log_rho_product"].map(String::from).to_vec();
    header.extend((1..=k).map(|i| format!("rho_{i}")));
    header.extend((1..=k).map(|i| format!("norm_drift_{i}")));
    header.push("grad_norm".into());
    let rows: Vec<Vec<String>> = trace
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![s(r.step), fmt_f64(r.time), fmt_f64(r.loss), fmt_f64(r.margin), fmt_f64(r.rho_product()), fmt_f64(r.log_rho_product)];
            row.extend(r.rho.iter().map(|x| fmt_f64(*x)));
            row.extend((0..k).map(|i| r.norm_drift.get(i).map(|x| fmt_f64(*x)).unwrap_or_else(|| "0e0".into())));
            row.push(fmt_f64(r.grad_norm));
            row
        })
        .collect();
    let fin = &trace.final_state;
    let summary = json!({
        "dynamics": p.dynamics,
        "steps": fin.step,
        "converged": trace.converged,
        "final_loss": fin.loss,
        "final_margin": fin.margin,
        "normalized_margin": normalized_margin(&fin.net, &data, 2.0).ok(),
        "max_pre_renorm_drift": trace.max_pre_renorm_drift,
        "max_norm_deviation": trace.max_norm_deviation,
    });
    let mut a = ArtifactSet::default();
    a.add("trace.csv", csv_text(&header, &rows)?);
    a.add("summary.json", json_text(&summary)?);
    a.add("final_network.txt", serialize::to_text(&fin.net));
    Ok(a)
}

fn linear_artifacts(p: &LinearParams, seed: u64) -> Result<ArtifactSet> {
    let data = p.data.load(seed)?;
    let d = data.dim();
    let v0 = match &p.v0 {
        Some(v) => v.clone(),
        None if d == 2 => vec![p.tilt.sin(), p.tilt.cos()],
        None => {
            let reference = support_vector_limit(&data)?;
            crate::flow::random_unit(&mut substream(seed, 12), d)
                .into_iter()
                .zip(&reference)
                .map(|(a, b)| a + 0.1 * b)
                .collect()
        }
    };
    let trace = run_linear(p.flow, &data, &v0, &p.config)?;
    let mut header: Vec<String> = vec!["t".into(), "rho".into()];
    header.extend((1..=d).map(|i| format!("v_{i}")));
    header.extend(["eps".into(), "max_exp_term".into()]);
    let rows: Vec<Vec<String>> = (0..trace.len())
        .map(|i| {
            let mut row = vec![fmt_f64(trace.times[i]), fmt_f64(trace.rho[i])];
            row.extend(trace.v[i].iter().map(|x| fmt_f64(*x)));
            row.extend([fmt_f64(trace.eps[i]), fmt_f64(trace.max_exp_term[i])]);
            row
        })
        .collect();
    let fits: Vec<Value> = [RateModel::RhoLog, RateModel::ErrInvLog, RateModel::ErrWn, RateModel::ExpTerm]
        .into_iter()
        .map(|m| match fit_rate(&trace, m, p.fit_window) {
            Ok(f) => serde_json::to_value(f).unwrap_or(Value::Null),
            Err(e) => json!({"model": m, "error": e.to_string()}),
        })
        .collect();
    let report = json!({
        "flow": p.flow,
        "reference": trace.reference,
        "restarts": trace.restarts,
        "final_eps": trace.eps.last(),
        "fits": fits,
    });
    let mut a = ArtifactSet::default();
    a.add("trace.csv", csv_text(&header, &rows)?);
    a.add("fits.json", json_text(&report)?);
    Ok(a)
}

fn langevin_artifacts(p: &LangevinParams) -> Result<ArtifactSet> {
    let pot = p.potential.build();
    let run = run_occupancy(&pot, &p.sampler)?;
    let g = run.histogram.grid;
    let mut header = vec!["w1_center".to_string()];
    header.extend((0..g.bins).map(|j| fmt_f64(g.center(0, j)[1])));
    let freq = run.histogram.frequencies();
    let rows: Vec<Vec<String>> = (0..g.bins)
        .map(|i| {
            let mut row = vec![fmt_f64(g.center(i, 0)[0])];
            row.extend(freq[i * g.bins..(i + 1) * g.bins].iter().map(|x| fmt_f64(*x)));
            row
        })
        .collect();
    let tv = match p.sampler.dynamics {
        Dynamics::Sgdl => Some(run.tv_to_boltzmann(&pot)?),
        Dynamics::PerturbedSgd { .. } => None,
    };
    let report = json!({
        "potential": run.potential,
        "dynamics": run.dynamics,
        "surrogate": matches!(p.sampler.dynamics, Dynamics::PerturbedSgd { .. }),
        "temperature": p.sampler.temperature,
        "samples": run.histogram.total,
        "bin_size": run.histogram.bin_size(),
        "basins": run.basins,
        "tv_to_boltzmann": tv,
        "mean": run.mean,
        "covariance": run.covariance,
    });
    let mut a = ArtifactSet::default();
    a.add("histogram.csv", csv_text(&header, &rows)?);
    a.add("basins.json", json_text(&report)?);
    Ok(a)
}

fn margin_artifacts(p: &MarginParams, seed: u64) -> Result<ArtifactSet> {
    let data = p.data.load(seed)?;
    let net = Network::random(p.architecture.clone(), p.activation, &mut substream(seed, 13))?;
    let report = run_margin_sequence(&net, &data, &p.schedule, &p.oracle)?;
    let rows: Vec<Value> = (0..report.rhos.len())
        .map(|i| {
            json!({
                "rho": report.rhos[i],
                "margin": report.margins[i],
                "gap": report.gaps[i],
                "inner_residual": report.residuals[i],
                "steps": report.iterations[i],
            })
        })
        .collect();
    let out = json!({
        "p": report.p,
        "oracle_margin": report.oracle_margin,
        "oracle": if report.oracle_exact { "exhaustive" } else { "heuristic_multistart" },
        "rows": rows,
        "final_gap": report.final_gap(),
        "tail_monotone": report.tail_monotone(),
    });
    let mut a = ArtifactSet::default();
    a.add("margin.json", json_text(&out)?);
    Ok(a)
}

fn normloss_artifacts(p: &NormlossConfig) -> Result<ArtifactSet> {
    let report = normalized_loss_experiment(p)?;
    let header: Vec<String> = [
        "init_seed",
        "randomized_labels",
        "train_loss",
        "test_loss",
        "train_loss_normalized",
        "test_loss_normalized",
        "train_error",
        "test_error",
        "rho_product",
    ]
    .map(String::from)
    .to_vec();
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .chain(report.randomized.as_ref())
        .map(|q| {
            vec![
                s(q.init_seed),
                s(q.randomized_labels),
                fmt_f64(q.train_loss),
                fmt_f64(q.test_loss),
                fmt_f64(q.train_loss_normalized),
                fmt_f64(q.test_loss_normalized),
                fmt_f64(q.train_error),
                fmt_f64(q.test_error),
                fmt_f64(q.rho_product),
            ]
        })
        .collect();
    let summary = json!({
        "analog": "two Gaussian blobs with a dense ReLU network",
        "inits_used": report.points.len(),
        "excluded": report.excluded,
        "rank_correlation_normalized": report.rank_correlation_normalized,
        "rank_correlation_raw": report.rank_correlation_raw,
        "randomized_label_train_error": report.randomized.as_ref().map(|r| r.train_error),
        "randomized_label_test_error": report.randomized.as_ref().map(|r| r.test_error),
    });
    let mut a = ArtifactSet::default();
    a.add("points.csv", csv_text(&header, &rows)?);
    a.add("summary.json", json_text(&summary)?);
    Ok(a)
}
