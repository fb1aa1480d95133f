use crate::error::{Error, Result};
use crate::flow::ClassificationDataset;
use crate::net::{Network, Workspace};

/// Exponents above this are summed in log-sum-exp form.
const EXP_GUARD: f64 = 700.0;

/// `L = Σ_n exp(−y_n f(x_n))`.
pub fn exp_loss(net: &Network, data: &ClassificationDataset) -> f64 {
    let mut ws = Workspace::default();
    let exps: Vec<f64> = data.iter().map(|(x, y)| -y * net.eval_with(x, &mut ws)).collect();
    sum_exp(&exps)
}

/// `log L`, finite even when `L` itself would overflow.
pub fn log_exp_loss(net: &Network, data: &ClassificationDataset) -> f64 {
    let mut ws = Workspace::default();
    let exps: Vec<f64> = data.iter().map(|(x, y)| -y * net.eval_with(x, &mut ws)).collect();
    log_sum_exp(&exps)
}

pub(crate) fn sum_exp(exps: &[f64]) -> f64 {
    if exps.iter().any(|&e| e > EXP_GUARD) {
        log_sum_exp(exps).exp()
    } else {
        exps.iter().map(|e| e.exp()).sum()
    }
}

pub(crate) fn log_sum_exp(exps: &[f64]) -> f64 {
    let m = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + exps.iter().map(|e| (e - m).exp()).sum::<f64>().ln()
}

/// Margin `min_n y_n f(x_n)`; `+inf` on an empty data set.
pub fn margin(net: &Network, data: &ClassificationDataset) -> f64 {
    let mut ws = Workspace::default();
    data.iter().map(|(x, y)| y * net.eval_with(x, &mut ws)).fold(f64::INFINITY, f64::min)
}

/// Loss and the descent direction `Ẇ = −∂L/∂W = Σ_n y_n ∂f/∂W(x_n) e^{−y_n f(x_n)}`.
pub fn loss_and_descent(net: &Network, data: &ClassificationDataset) -> Result<(f64, Vec<f64>)> {
    if !data.is_empty() && data.dim() != net.input_dim() {
        return Err(Error::Shape { expected: net.input_dim(), got: data.dim() });
    }
    let mut ws = Workspace::default();
    let mut dir = vec![0.0; net.param_len()];
    let mut loss = 0.0;
    for (x, y) in data.iter() {
        let f = net.eval_with(x, &mut ws);
        let e = (-y * f).min(EXP_GUARD).exp();
        loss += e;
        net.accumulate_gradient(x, y * e, &mut dir, &mut ws);
    }
    Ok((loss, dir))
}

/// Gradient of `log L`, i.e. the descent direction divided by `L`; stays
/// well scaled when the loss is astronomically small.
pub fn log_loss_and_descent(net: &Network, data: &ClassificationDataset) -> Result<(f64, Vec<f64>)> {
    if !data.is_empty() && data.dim() != net.input_dim() {
        return Err(Error::Shape { expected: net.input_dim(), got: data.dim() });
    }
    let mut ws = Workspace::default();
    let exps: Vec<f64> = data.iter().map(|(x, y)| -y * net.eval_with(x, &mut ws)).collect();
    let lse = log_sum_exp(&exps);
    let mut dir = vec![0.0; net.param_len()];
    for ((x, y), e) in data.iter().zip(&exps) {
        let w = (e - lse).exp();
        net.accumulate_gradient(x, y * w, &mut dir, &mut ws);
    }
    Ok((lse, dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::net::{Activation, ArchitectureSpec};

    fn linear(w: &[f64]) -> Network {
        Network::new(
            ArchitectureSpec::linear(w.len()),
            Activation::Relu,
            vec![Matrix::from_vec(1, w.len(), w.to_vec())],
        )
        .unwrap()
    }

    #[test]
    fn zero_function_loss_counts_samples() {
        let data = ClassificationDataset::random_linear_separable(1, 7, 2, 0.0);
        let net = Network::zeros(ArchitectureSpec::linear(2), Activation::Relu).unwrap();
        assert_eq!(exp_loss(&net, &data), 7.0);
    }

    #[test]
    fn single_sample_ln2() {
        let data = ClassificationDataset::new(vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        let net = linear(&[std::f64::consts::LN_2, 0.0]);
        assert!((exp_loss(&net, &data) - 0.5).abs() < 1e-15);
        assert!((log_exp_loss(&net, &data) + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn log_space_survives_overflow() {
        let data = ClassificationDataset::new(vec![vec![1.0]], vec![-1.0]).unwrap();
        let net = linear(&[800.0]);
        assert_eq!(log_exp_loss(&net, &data), 800.0);
        assert!(exp_loss(&net, &data).is_infinite());
    }

    #[test]
    fn descent_is_minus_gradient() {
        let data = ClassificationDataset::random_linear_separable(3, 6, 3, 0.05);
        let net = linear(&[0.3, -0.2, 0.5]);
        let (l, d) = loss_and_descent(&net, &data).unwrap();
        assert!((l - exp_loss(&net, &data)).abs() < 1e-14);
        let h = 1e-6;
        for i in 0..3 {
            let mut p = net.params();
            p[i] += h;
            let up = exp_loss(&net.with_params(&p).unwrap(), &data);
            p[i] -= 2.0 * h;
            let down = exp_loss(&net.with_params(&p).unwrap(), &data);
            assert!(((up - down) / (2.0 * h) + d[i]).abs() < 1e-8);
        }
    }
}
