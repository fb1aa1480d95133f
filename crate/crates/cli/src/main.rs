use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowlab::approx::{TargetKind, TargetSpec};
use flowlab::flow::FlowKind;
use flowlab::harness::{self, DataSource, Experiment, RunConfig};
use flowlab::langevin::{Dynamics, PotentialKind};
use flowlab::linear::LinearFlow;
use flowlab::margin::MarginSchedule;
use flowlab::net::ArchitectureSpec;
use flowlab::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "flowlab", version, about = "Gradient-flow, margin, Langevin and approximation experiments")]
struct Cli {
    /// Master seed; every module-level seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: runs/<experiment>-<config hash>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the resolved plan and exit without running.
    #[arg(long, global = true)]
    dry: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Shallow versus tree approximation of a target function.
    Approx(ApproxArgs),
    /// Exponential-loss gradient flows on a homogeneous network.
    Flow(FlowArgs),
    /// Linear-model rates for plain and weight-normalized gradient descent.
    Linear(LinearArgs),
    /// Basin occupancy of Langevin-type dynamics on 2D potentials.
    Langevin(LangevinArgs),
    /// Normalized margin along an increasing norm schedule.
    Margin(MarginArgs),
    /// Raw versus normalized loss across random initializations.
    Normloss(NormlossArgs),
    /// Re-run a manifest and verify its artifacts hash identically.
    Replay(ReplayArgs),
}

/// Integer counts, accepting scientific notation such as `1e7`.
fn count(s: &str) -> std::result::Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v < 0.0 || v.fract() != 0.0 || v > 9.0e15 {
        return Err(format!("`{s}` is not a non-negative integer"));
    }
    Ok(v as u64)
}

fn list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| count(t.trim()).map(|v| v as usize)).collect()
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    Compositional,
    Generic,
}

#[derive(Args, Debug)]
struct ApproxArgs {
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
    /// Input dimension (a power of two).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    smoothness: Option<u32>,
    /// Comma-separated unit budgets.
    #[arg(long, value_parser = list)]
    budgets: Option<Vec<usize>>,
    /// Number of training seeds, counted up from `--seed`.
    #[arg(long, value_parser = count)]
    seeds: Option<u64>,
    #[arg(long, value_parser = count)]
    steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Record wall-clock seconds per fit (breaks byte-exact replay).
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FlowArg {
    #[value(alias = "standard_gd", alias = "gd")]
    Standardgd,
    #[value(alias = "rho_v")]
    Rhov,
    #[value(alias = "tangent_constrained")]
    Tangent,
    #[value(alias = "weight_norm", alias = "wn")]
    Weightnorm,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV data file with rows `label,x1,…,xd`.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl DataArgs {
    fn source(&self) -> Option<DataSource> {
        self.data.clone().map(|path| DataSource::File { path })
    }
}

#[derive(Args, Debug)]
struct FlowArgs {
    #[arg(long, value_enum)]
    kind: Option<FlowArg>,
    /// Norm order of the constrained directions.
    #[arg(long)]
    p: Option<f64>,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated hidden widths of a dense ReLU network (empty: linear).
    #[arg(long, value_parser = list)]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_parser = count)]
    steps: Option<u64>,
    #[arg(long, value_parser = count)]
    record_every: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LinearArg {
    Gd,
    Wn,
}

#[derive(Args, Debug)]
struct LinearArgs {
    #[arg(long, value_enum)]
    flow: Option<LinearArg>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = count)]
    steps: Option<u64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    rho0: Option<f64>,
    /// Initial angle away from the reference direction, in radians.
    #[arg(long)]
    tilt: Option<f64>,
    #[arg(long, value_parser = count)]
    record_every: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PotentialArg {
    Bowl,
    #[value(alias = "double_well")]
    DoubleWell,
    Wedge,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DynamicsArg {
    Sgdl,
    Perturbed,
}

#[derive(Args, Debug)]
struct LangevinArgs {
    #[arg(long, value_enum)]
    potential: Option<PotentialArg>,
    #[arg(long = "T", alias = "temperature")]
    temperature: Option<f64>,
    #[arg(long, value_parser = count)]
    steps: Option<u64>,
    #[arg(long)]
    eta: Option<f64>,
    /// `perturbed` also switches to its own step size and perturbation radius
    /// unless these are given explicitly.
    #[arg(long, value_enum)]
    dynamics: Option<DynamicsArg>,
    #[arg(long)]
    radius: Option<f64>,
    /// Fraction of steps discarded before recording.
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args, Debug)]
struct MarginArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Schedule `lo:hi:geometric` (ratio 2) or `lo:hi:<ratio>`.
    #[arg(long)]
    rhos: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, value_parser = list)]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    starts: Option<usize>,
}

#[derive(Args, Debug)]
struct NormlossArgs {
    #[arg(long)]
    inits: Option<usize>,
    #[arg(long, value_parser = count)]
    steps: Option<u64>,
    #[arg(long, value_parser = count)]
    random_label_steps: Option<u64>,
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Manifest written by a previous run.
    manifest: PathBuf,
}

fn parse_schedule(text: &str, p: f64) -> Result<MarginSchedule> {
    let bad = || Error::Config { key: "rhos".into(), message: format!("expected lo:hi:geometric or lo:hi:ratio, got `{text}`") };
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let ratio = if parts[2] == "geometric" { 2.0 } else { parts[2].parse().map_err(|_| bad())? };
    MarginSchedule::geometric(lo, hi, ratio, p)
}

fn dense(hidden: &[usize]) -> ArchitectureSpec {
    ArchitectureSpec::Dense { input_dim: 2, hidden: hidden.to_vec(), input_bias: false }
}

fn with_input_dim(arch: ArchitectureSpec, dim: usize) -> ArchitectureSpec {
    match arch {
        ArchitectureSpec::Dense { hidden, input_bias, .. } => ArchitectureSpec::Dense { input_dim: dim, hidden, input_bias },
        other => other,
    }
}

/// Dense architectures follow the dimension of a data file given on the
/// command line.
fn fit_to_data(arch: &mut ArchitectureSpec, data: &DataSource, seed: u64) -> Result<()> {
    if let DataSource::File { .. } = data {
        let dim = data.load(seed)?.dim();
        *arch = with_input_dim(arch.clone(), dim);
    }
    Ok(())
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let name = match &cli.command {
        Command::Approx(_) => "approx",
        Command::Flow(_) => "flow",
        Command::Linear(_) => "linear",
        Command::Langevin(_) => "langevin",
        Command::Margin(_) => "margin",
        Command::Normloss(_) => "normloss",
        Command::Replay(_) => unreachable!("replay has no run configuration"),
    };
    let mut cfg = match &cli.config {
        Some(path) => {
            let c = RunConfig::load(path)?;
            if c.experiment.name() != name {
                return Err(Error::Config {
                    key: "experiment".into(),
                    message: format!("config describes `{}` but `{name}` was requested", c.experiment.name()),
                });
            }
            c
        }
        None => RunConfig::new(Experiment::default_for(name)?, 0),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    let seed = cfg.seed;
    match (&cli.command, &mut cfg.experiment) {
        (Command::Approx(a), Experiment::Approx(p)) => {
            if let Some(t) = a.target {
                p.target.kind = match t {
                    TargetArg::Compositional => TargetKind::Compositional,
                    TargetArg::Generic => TargetKind::GenericSmooth,
                };
            }
            if let Some(n) = a.n {
                p.target = TargetSpec { input_dim: n, ..p.target.clone() };
            }
            if let Some(m) = a.smoothness {
                p.target.smoothness = m;
            }
            if let Some(b) = &a.budgets {
                p.scaling.budgets = b.clone();
            }
            if let Some(k) = a.seeds {
                p.scaling.seeds = (0..k).map(|i| seed.wrapping_add(i)).collect();
            }
            if let Some(s) = a.steps {
                p.scaling.train.steps = s as usize;
            }
            if let Some(lr) = a.lr {
                p.scaling.train.learning_rate = lr;
            }
            p.scaling.timing |= a.timing;
        }
        (Command::Flow(a), Experiment::Flow(p)) => {
            if let Some(k) = a.kind {
                p.dynamics = match k {
                    FlowArg::Standardgd => FlowKind::StandardGd,
                    FlowArg::Rhov => FlowKind::RhoV,
                    FlowArg::Weightnorm => FlowKind::WeightNorm,
                    FlowArg::Tangent => FlowKind::TangentConstrained { p: a.p.unwrap_or(2.0) },
                };
            }
            match (a.p, &mut p.dynamics) {
                (Some(q), FlowKind::TangentConstrained { p }) => *p = q,
                (Some(q), _) if q != 2.0 => {
                    return Err(Error::Config { key: "p".into(), message: format!("--p {q} needs --kind tangent") })
                }
                _ => {}
            }
            if let Some(src) = a.data.source() {
                p.data = src;
            }
            if let Some(h) = &a.hidden {
                p.architecture = dense(h);
            }
            fit_to_data(&mut p.architecture, &p.data, seed)?;
            if let Some(eta) = a.eta {
                p.flow.eta = eta;
            }
            if let Some(s) = a.steps {
                p.flow.steps = s as usize;
            }
            if let Some(r) = a.record_every {
                p.flow.record_every = r as usize;
            }
        }
        (Command::Linear(a), Experiment::Linear(p)) => {
            if let Some(f) = a.flow {
                p.flow = match f {
                    LinearArg::Gd => LinearFlow::Gd,
                    LinearArg::Wn => LinearFlow::Wn,
                };
            }
            if let Some(src) = a.data.source() {
                p.data = src;
            }
            if let Some(s) = a.steps {
                p.config.steps = s as usize;
            }
            if let Some(eta) = a.eta {
                p.config.eta = eta;
            }
            if let Some(r) = a.rho0 {
                p.config.rho0 = r;
            }
            if let Some(t) = a.tilt {
                p.tilt = t;
            }
            if let Some(r) = a.record_every {
                p.config.record_every = r as usize;
            }
        }
        (Command::Langevin(a), Experiment::Langevin(p)) => {
            if let Some(k) = a.potential {
                p.potential = match k {
                    PotentialArg::Bowl => PotentialKind::Bowl,
                    PotentialArg::DoubleWell => PotentialKind::DoubleWell,
                    PotentialArg::Wedge => PotentialKind::Wedge,
                };
            }
            match a.dynamics {
                Some(DynamicsArg::Perturbed) if !matches!(p.sampler.dynamics, Dynamics::PerturbedSgd { .. }) => {
                    let base = flowlab::langevin::LangevinConfig::perturbed();
                    p.sampler.dynamics = base.dynamics;
                    p.sampler.eta = base.eta;
                    p.sampler.burn_in = base.burn_in;
                }
                Some(DynamicsArg::Sgdl) => p.sampler.dynamics = Dynamics::Sgdl,
                _ => {}
            }
            if let Some(r) = a.radius {
                match &mut p.sampler.dynamics {
                    Dynamics::PerturbedSgd { radius } => *radius = r,
                    Dynamics::Sgdl => {
                        return Err(Error::Config { key: "radius".into(), message: "--radius needs --dynamics perturbed".into() })
                    }
                }
            }
            if let Some(t) = a.temperature {
                p.sampler.temperature = t;
            }
            if let Some(s) = a.steps {
                p.sampler.steps = s;
            }
            if let Some(eta) = a.eta {
                p.sampler.eta = eta;
            }
            if let Some(b) = a.burn_in {
                p.sampler.burn_in = b;
            }
            if let Some(b) = a.bins {
                p.sampler.bins = b;
            }
        }
        (Command::Margin(a), Experiment::Margin(p)) => {
            if let Some(src) = a.data.source() {
                p.data = src;
            }
            if let Some(q) = a.p {
                p.schedule.p = q;
            }
            if let Some(r) = &a.rhos {
                let inner = p.schedule.inner.clone();
                p.schedule = MarginSchedule { inner, ..parse_schedule(r, p.schedule.p)? };
            }
            if let Some(h) = &a.hidden {
                p.architecture = dense(h);
            }
            fit_to_data(&mut p.architecture, &p.data, seed)?;
            if let Some(s) = a.starts {
                p.oracle.starts = s;
            }
        }
        (Command::Normloss(a), Experiment::Normloss(p)) => {
            if let Some(i) = a.inits {
                p.inits = i;
            }
            if let Some(s) = a.steps {
                p.steps = s as usize;
            }
            if let Some(s) = a.random_label_steps {
                p.random_label_steps = s as usize;
            }
            if let Some(eta) = a.eta {
                p.eta = eta;
            }
        }
        _ => unreachable!("experiment kind checked above"),
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    if let Command::Replay(r) = &cli.command {
        if cli.dry {
            let m = harness::Manifest::load(&r.manifest)?;
            println!("replay {} ({} artifacts, seed {})", m.experiment, m.artifacts.len(), m.seed);
            return Ok(());
        }
        let outcome = harness::replay(&r.manifest, cli.out.clone())?;
        println!("replay ok: {} artifacts identical in {}", outcome.manifest.artifacts.len(), outcome.dir.display());
        return Ok(());
    }
    let cfg = build_config(cli)?;
    if cli.dry {
        print!("{}", cfg.plan()?);
        return Ok(());
    }
    let outcome = harness::run(&cfg)?;
    println!("{} run written to {}", cfg.experiment.name(), outcome.dir.display());
    for a in &outcome.manifest.artifacts {
        println!("  {}  {}", &a.sha256[..16], a.path);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
