//! Regularized-margin sequence on linear instances, checked against an
//! independent angular search over the unit circle.

use flowlab::flow::ClassificationDataset;
use flowlab::margin::{run_margin_sequence, MarginSchedule, OracleConfig};
use flowlab::net::{Activation, ArchitectureSpec, Network};
use flowlab::rng::substream;
use std::f64::consts::TAU;

fn signed(data: &ClassificationDataset) -> Vec<[f64; 2]> {
    data.iter().map(|(x, y)| [y * x[0], y * x[1]]).collect()
}

fn dir(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

fn min_margin(z: &[[f64; 2]], theta: f64) -> f64 {
    let v = dir(theta);
    z.iter().map(|p| v[0] * p[0] + v[1] * p[1]).fold(f64::INFINITY, f64::min)
}

fn log_loss(z: &[[f64; 2]], theta: f64, rho: f64) -> f64 {
    let v = dir(theta);
    let a: Vec<f64> = z.iter().map(|p| -rho * (v[0] * p[0] + v[1] * p[1])).collect();
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + a.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Grid search followed by golden-section refinement of `f` on the circle.
fn argmin_on_circle(f: impl Fn(f64) -> f64) -> f64 {
    let n = 200_000;
    let best = (0..n).map(|i| TAU * i as f64 / n as f64).min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
    let (mut lo, mut hi) = (best - TAU / n as f64, best + TAU / n as f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

fn independent_gaps(data: &ClassificationDataset, rhos: &[f64]) -> Vec<f64> {
    let z = signed(data);
    let best = min_margin(&z, argmin_on_circle(|t| -min_margin(&z, t)));
    rhos.iter().map(|&rho| best - min_margin(&z, argmin_on_circle(|t| log_loss(&z, t, rho)))).collect()
}

fn report(seed: u64) -> (ClassificationDataset, flowlab::margin::MarginReport) {
    let data = ClassificationDataset::random_linear_separable(seed, 10, 2, 0.1);
    let net = Network::random(ArchitectureSpec::linear(2), Activation::Relu, &mut substream(seed, 13)).unwrap();
    let r = run_margin_sequence(&net, &data, &MarginSchedule::doubling(), &OracleConfig::default()).unwrap();
    (data, r)
}

#[test]
fn solver_gaps_match_an_angular_search() {
    for seed in [0, 3, 6] {
        let (data, r) = report(seed);
        let reference = independent_gaps(&data, &r.rhos);
        for (a, b) in r.gaps.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-6, "seed {seed}: solver gap {a} vs angular search {b}");
        }
    }
}

/// The gap at the exact minimizer is not monotone in ρ on every instance:
/// on this one it rises between two late schedule points.
#[test]
fn gap_can_increase_on_a_separable_instance() {
    let (data, r) = report(6);
    let reference = independent_gaps(&data, &r.rhos);
    let tail = &reference[reference.len() / 2..];
    assert!(tail.windows(2).any(|w| w[1] > w[0] + 1e-6), "reference gaps {reference:?}");
    assert!(!r.tail_monotone());
    assert!(r.final_gap() < 1e-2);
}
