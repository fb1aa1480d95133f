//! Raw versus layer-normalized exponential losses across random
//! initializations of a small dense ReLU classifier on two Gaussian blobs.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{loss_and_descent, ClassificationDataset};
use crate::net::{decompose, Activation, ArchitectureSpec, Network, Workspace};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormlossConfig {
    pub train_points: usize,
    pub test_points: usize,
    pub dim: usize,
    pub separation: f64,
    pub std: f64,
    pub margin: f64,
    pub hidden: Vec<usize>,
    pub inits: usize,
    pub optimizer: Optimizer,
    /// Learning rate (Adam) or initial step (adaptive GD).
    pub eta: f64,
    pub steps: usize,
    /// Step budget for the randomized-label run.
    pub random_label_steps: usize,
    pub seed: u64,
}

impl Default for NormlossConfig {
    fn default() -> Self {
        Self {
            train_points: 100,
            test_points: 2000,
            dim: 10,
            separation: 3.0,
            std: 0.8,
            margin: 0.5,
            hidden: vec![24, 24],
            inits: 20,
            optimizer: Optimizer::Adam,
            eta: 1e-3,
            steps: 5000,
            random_label_steps: 5000,
            seed: 0,
        }
    }
}

impl NormlossConfig {
    pub fn architecture(&self) -> ArchitectureSpec {
        ArchitectureSpec::Dense { input_dim: self.dim, hidden: self.hidden.clone(), input_bias: true }
    }
}

/// Optimizer for the mean exponential loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Full-batch Adam (β₁ = 0.9, β₂ = 0.999, ε = 1e-8), learning rate
    /// decaying linearly to zero over the run.
    Adam,
    /// Full-batch gradient descent with a monotone adaptive step.
    AdaptiveGd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedLossPoint {
    pub init_seed: u64,
    pub randomized_labels: bool,
    /// Mean `exp(−y f(x))` of the trained network.
    pub train_loss: f64,
    pub test_loss: f64,
    /// Same losses for `f̃ = f / Π‖W_k‖₂`.
    pub train_loss_normalized: f64,
    pub test_loss_normalized: f64,
    pub train_error: f64,
    pub test_error: f64,
    pub rho_product: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormlossReport {
    pub points: Vec<NormalizedLossPoint>,
    /// Initializations that missed zero training error, with their final error.
    pub excluded: Vec<(u64, f64)>,
    pub randomized: Option<NormalizedLossPoint>,
    pub rank_correlation_normalized: f64,
    pub rank_correlation_raw: f64,
}

fn mean_loss_and_error(net: &Network, data: &ClassificationDataset) -> (f64, f64) {
    let mut ws = Workspace::default();
    let mut loss = 0.0;
    let mut wrong = 0usize;
    for (x, y) in data.iter() {
        let f = net.eval_with(x, &mut ws);
        loss += (-y * f).min(700.0).exp();
        if y * f <= 0.0 {
            wrong += 1;
        }
    }
    let n = data.len().max(1) as f64;
    (loss / n, wrong as f64 / n)
}

pub fn train_classifier(
    net: Network,
    data: &ClassificationDataset,
    optimizer: Optimizer,
    eta: f64,
    steps: usize,
) -> Result<Network> {
    match optimizer {
        Optimizer::Adam => train_adam(net, data, eta, steps),
        Optimizer::AdaptiveGd => train_adaptive_gd(net, data, eta, steps),
    }
}

fn non_finite(step: usize) -> Error {
    Error::Training { step, reason: "non-finite loss or gradient".into() }
}

fn train_adam(net: Network, data: &ClassificationDataset, lr: f64, steps: usize) -> Result<Network> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    let mut net = net;
    let mut params = net.params();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let n = data.len().max(1) as f64;
    let (mut c1, mut c2) = (1.0, 1.0);
    for step in 0..steps {
        let (loss, dir) = loss_and_descent(&net, data)?;
        if !loss.is_finite() || dir.iter().any(|g| !g.is_finite()) {
            return Err(non_finite(step));
        }
        c1 *= B1;
        c2 *= B2;
        let rate = lr * (1.0 - step as f64 / steps as f64);
        for ((p, (m, v)), d) in params.iter_mut().zip(m.iter_mut().zip(v.iter_mut())).zip(&dir) {
            let g = -d / n;
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            *p -= rate * (*m / (1.0 - c1)) / ((*v / (1.0 - c2)).sqrt() + 1e-8);
        }
        net.set_params(&params)?;
    }
    Ok(net)
}

/// A step is kept only if it lowers the loss, halving the step otherwise;
/// each accepted step lets the next one grow by 10%.
fn train_adaptive_gd(net: Network, data: &ClassificationDataset, eta: f64, steps: usize) -> Result<Network> {
    let mut net = net;
    let mut params = net.params();
    let n = data.len().max(1) as f64;
    let mut step_size = eta;
    let (mut loss, mut dir) = loss_and_descent(&net, data)?;
    let mut trial = params.clone();
    for step in 0..steps {
        if !loss.is_finite() || dir.iter().any(|g| !g.is_finite()) {
            return Err(non_finite(step));
        }
        loop {
            trial.copy_from_slice(&params);
            crate::linalg::axpy(&mut trial, step_size / n, &dir);
            net.set_params(&trial)?;
            let (next, next_dir) = loss_and_descent(&net, data)?;
            if next.is_finite() && next < loss {
                std::mem::swap(&mut params, &mut trial);
                loss = next;
                dir = next_dir;
                step_size *= 1.1;
                break;
            }
            step_size *= 0.5;
            if step_size < 1e-300 {
                net.set_params(&params)?;
                return Ok(net);
            }
        }
    }
    net.set_params(&params)?;
    Ok(net)
}

fn evaluate(seed: u64, randomized: bool, net: &Network, train: &ClassificationDataset, test: &ClassificationDataset) -> Result<NormalizedLossPoint> {
    let d = decompose(net, 2.0)?;
    let normalized = d.normalized(net)?;
    let (train_loss, train_error) = mean_loss_and_error(net, train);
    let (test_loss, test_error) = mean_loss_and_error(net, test);
    let (train_loss_normalized, _) = mean_loss_and_error(&normalized, train);
    let (test_loss_normalized, _) = mean_loss_and_error(&normalized, test);
    Ok(NormalizedLossPoint {
        init_seed: seed,
        randomized_labels: randomized,
        train_loss,
        test_loss,
        train_loss_normalized,
        test_loss_normalized,
        train_error,
        test_error,
        rho_product: d.rho_product(),
    })
}

/// Labels permuted at random within each class, so every blob carries both
/// labels in equal proportion.
pub fn balanced_random_labels(data: &ClassificationDataset, seed: u64) -> Result<ClassificationDataset> {
    let mut rng = substream(seed, 0x1abe1);
    let mut labels = data.labels().to_vec();
    for class in [-1.0, 1.0] {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| data.labels()[i] == class).collect();
        let mut fresh: Vec<f64> = (0..idx.len()).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        fresh.shuffle(&mut rng);
        for (i, y) in idx.into_iter().zip(fresh) {
            labels[i] = y;
        }
    }
    data.with_labels(labels)
}

pub fn normalized_loss_experiment(config: &NormlossConfig) -> Result<NormlossReport> {
    if config.inits < 2 {
        return Err(Error::Config { key: "inits".into(), message: "need at least two initializations".into() });
    }
    let train = ClassificationDataset::gaussian_blobs_in(
        config.seed,
        config.train_points,
        config.dim,
        config.separation,
        config.std,
        config.margin,
    );
    let test = ClassificationDataset::gaussian_blobs_in(
        config.seed.wrapping_add(1_000_003),
        config.test_points,
        config.dim,
        config.separation,
        config.std,
        config.margin,
    );
    let arch = config.architecture();
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for i in 0..config.inits as u64 {
        let seed = config.seed.wrapping_add(i);
        let init = Network::random(arch.clone(), Activation::Relu, &mut substream(seed, 7))?;
        let net = train_classifier(init, &train, config.optimizer, config.eta, config.steps)?;
        let point = evaluate(seed, false, &net, &train, &test)?;
        if point.train_error > 0.0 {
            excluded.push((seed, point.train_error));
        } else {
            points.push(point);
        }
    }
    let randomized = if config.random_label_steps > 0 {
        let noisy = balanced_random_labels(&train, config.seed)?;
        let init = Network::random(arch, Activation::Relu, &mut substream(config.seed, 8))?;
        let net = train_classifier(init, &noisy, config.optimizer, config.eta, config.random_label_steps)?;
        let mut p = evaluate(config.seed, true, &net, &noisy, &test)?;
        p.train_error = mean_loss_and_error(&net, &noisy).1;
        Some(p)
    } else {
        None
    };
    let col = |f: fn(&NormalizedLossPoint) -> f64| points.iter().map(f).collect::<Vec<_>>();
    let rank_correlation_normalized =
        spearman(&col(|p| p.train_loss_normalized), &col(|p| p.test_loss_normalized));
    let rank_correlation_raw = spearman(&col(|p| p.train_loss), &col(|p| p.test_loss));
    Ok(NormlossReport { points, excluded, randomized, rank_correlation_normalized, rank_correlation_raw })
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; NaN when either side is constant or too short.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() || a.len() < 2 {
        return f64::NAN;
    }
    pearson(&ranks(a), &ranks(b))
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
