use std::ops::Range;

use rand::Rng;

use super::activation::Activation;
use super::arch::{ArchitectureSpec, TREE_ARITY};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// A network `f(W; x)`: an architecture, an activation and one weight
/// matrix per layer. The output is always a scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: ArchitectureSpec,
    activation: Activation,
    layers: Vec<Matrix>,
}

/// Scratch buffers for allocation-free forward and backward passes.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Network {
    pub fn new(spec: ArchitectureSpec, activation: Activation, layers: Vec<Matrix>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::Shape { expected: shapes.len(), got: layers.len() });
        }
        for (&(r, c), m) in shapes.iter().zip(&layers) {
            if m.rows() != r || m.cols() != c {
                return Err(Error::Shape { expected: r * c, got: m.rows() * m.cols() });
            }
        }
        Ok(Self { spec, activation, layers })
    }

    pub fn zeros(spec: ArchitectureSpec, activation: Activation) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layer_shapes().into_iter().map(|(r, c)| Matrix::zeros(r, c)).collect();
        Ok(Self { spec, activation, layers })
    }

    /// Weights i.i.d. uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random<R: Rng + ?Sized>(spec: ArchitectureSpec, activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec, activation)?;
        let fans = net.spec.fan_ins();
        for (layer, fan) in net.layers.iter_mut().zip(fans) {
            let bound = 1.0 / (fan.max(1) as f64).sqrt();
            for w in layer.as_mut_slice() {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> &Matrix {
        &self.layers[k]
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Replace the weights, keeping architecture and activation.
    pub fn with_layers(&self, layers: Vec<Matrix>) -> Result<Self> {
        Self::new(self.spec.clone(), self.activation, layers)
    }

    pub fn param_len(&self) -> usize {
        self.layers.iter().map(Matrix::len).sum()
    }

    /// Index ranges of each layer inside the flat parameter vector.
    pub fn layer_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.layers
            .iter()
            .map(|m| {
                let r = start..start + m.len();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(Error::Shape { expected: self.param_len(), got: params.len() });
        }
        let mut start = 0;
        for m in &mut self.layers {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&params[start..start + n]);
            start += n;
        }
        Ok(())
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let mut net = self.clone();
        net.set_params(params)?;
        Ok(net)
    }

    pub fn set_layer(&mut self, k: usize, layer: Matrix) -> Result<()> {
        let old = &self.layers[k];
        if old.rows() != layer.rows() || old.cols() != layer.cols() {
            return Err(Error::Shape { expected: old.len(), got: layer.len() });
        }
        self.layers[k] = layer;
        Ok(())
    }

    /// True when every layer enters `f` positively homogeneously, i.e.
    /// scaling layer k by c scales f by c. Trees carry biases above the
    /// input level, so only dense stacks qualify.
    pub fn is_layerwise_homogeneous(&self) -> bool {
        self.activation.is_positively_homogeneous() && !matches!(self.spec, ArchitectureSpec::BinaryTree { .. })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// `f(W; x)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.eval_with(x, &mut Workspace::default()))
    }

    /// Unchecked forward pass reusing `ws`; `x.len()` must equal the input dimension.
    pub fn eval_with(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        match &self.spec {
            ArchitectureSpec::Shallow { .. } => self.dense_forward(x, true, ws),
            ArchitectureSpec::Dense { input_bias, .. } => self.dense_forward(x, *input_bias, ws),
            ArchitectureSpec::BinaryTree { units_per_node, .. } => self.tree_forward(x, *units_per_node, ws),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_with(x, &mut Workspace::default())
    }

    /// Gradient of `f(W; x)` with respect to every weight, flattened in layer order.
    pub fn grad_params(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut g = vec![0.0; self.param_len()];
        self.accumulate_gradient(x, 1.0, &mut g, &mut Workspace::default());
        Ok(g)
    }

    /// `grad += scale * ∂f/∂W (x)`; returns `f(x)`.
    pub fn accumulate_gradient(&self, x: &[f64], scale: f64, grad: &mut [f64], ws: &mut Workspace) -> f64 {
        debug_assert_eq!(grad.len(), self.param_len());
        match &self.spec {
            ArchitectureSpec::Shallow { .. } => self.dense_backward(x, true, scale, grad, ws),
            ArchitectureSpec::Dense { input_bias, .. } => self.dense_backward(x, *input_bias, scale, grad, ws),
            ArchitectureSpec::BinaryTree { units_per_node, .. } => {
                self.tree_backward(x, *units_per_node, scale, grad, ws)
            }
        }
    }

    /// `|Σ_ij W_k^ij ∂f/∂W_k^ij − f(x)|`. Vanishes for layerwise
    /// homogeneous networks; for others it measures the failure.
    pub fn structural_identity_residual(&self, x: &[f64], k: usize) -> Result<f64> {
        if k >= self.layers.len() {
            return Err(Error::Shape { expected: self.layers.len(), got: k });
        }
        let g = self.grad_params(x)?;
        let range = self.layer_ranges()[k].clone();
        let lhs = dot(self.layers[k].as_slice(), &g[range]);
        Ok((lhs - self.forward(x)?).abs())
    }

    fn dense_forward(&self, x: &[f64], bias: bool, ws: &mut Workspace) -> f64 {
        let k_last = self.layers.len() - 1;
        ws.acts.resize(self.layers.len(), Vec::new());
        ws.pre.resize(self.layers.len(), Vec::new());
        let input = &mut ws.acts[0];
        input.clear();
        input.extend_from_slice(x);
        if bias {
            input.push(1.0);
        }
        for (k, w) in self.layers.iter().enumerate() {
            let mut z = std::mem::take(&mut ws.pre[k]);
            z.resize(w.rows(), 0.0);
            w.mul_vec(&ws.acts[k], &mut z);
            if k < k_last {
                let next = &mut ws.acts[k + 1];
                next.clear();
                next.extend(z.iter().map(|&v| self.activation.value(v)));
            }
            ws.pre[k] = z;
        }
        ws.pre[k_last][0]
    }

    fn dense_backward(&self, x: &[f64], bias: bool, scale: f64, grad: &mut [f64], ws: &mut Workspace) -> f64 {
        let out = self.dense_forward(x, bias, ws);
        let ranges = self.layer_ranges();
        ws.delta.clear();
        ws.delta.push(scale);
        for k in (0..self.layers.len()).rev() {
            let w = &self.layers[k];
            let a = &ws.acts[k];
            let g = &mut grad[ranges[k].clone()];
            for (r, &d) in ws.delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut g[r * w.cols()..(r + 1) * w.cols()];
                for (gv, av) in row.iter_mut().zip(a) {
                    *gv += d * av;
                }
            }
            if k == 0 {
                break;
            }
            ws.delta_next.clear();
            ws.delta_next.resize(w.cols(), 0.0);
            for (r, &d) in ws.delta.iter().enumerate() {
                if d != 0.0 {
                    crate::linalg::axpy(&mut ws.delta_next, d, w.row(r));
                }
            }
            for (dn, &z) in ws.delta_next.iter_mut().zip(&ws.pre[k - 1]) {
                *dn *= self.activation.derivative(z);
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_next);
        }
        out
    }

    // Tree buffers: acts[l] holds the inputs of level l (len = 2 * nodes_l),
    // pre[l] the pre-activations of its units (len = nodes_l * m).
    fn tree_forward(&self, x: &[f64], m: usize, ws: &mut Workspace) -> f64 {
        let levels = self.layers.len() / 2;
        ws.acts.resize(levels + 1, Vec::new());
        ws.pre.resize(levels, Vec::new());
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(x);
        for l in 0..levels {
            let inner = &self.layers[2 * l];
            let outer = &self.layers[2 * l + 1];
            let nodes = outer.rows();
            let mut z = std::mem::take(&mut ws.pre[l]);
            z.clear();
            let mut next = std::mem::take(&mut ws.acts[l + 1]);
            next.clear();
            let input = &ws.acts[l];
            for j in 0..nodes {
                let (left, right) = (input[TREE_ARITY * j], input[TREE_ARITY * j + 1]);
                let a = outer.row(j);
                let mut out = 0.0;
                for i in 0..m {
                    let row = inner.row(j * m + i);
                    let zi = row[0] * left + row[1] * right + row[2];
                    z.push(zi);
                    out += a[i] * self.activation.value(zi);
                }
                next.push(out);
            }
            ws.pre[l] = z;
            ws.acts[l + 1] = next;
        }
        ws.acts[levels][0]
    }

    fn tree_backward(&self, x: &[f64], m: usize, scale: f64, grad: &mut [f64], ws: &mut Workspace) -> f64 {
        let out = self.tree_forward(x, m, ws);
        let levels = self.layers.len() / 2;
        let ranges = self.layer_ranges();
        ws.delta.clear();
        ws.delta.push(scale);
        for l in (0..levels).rev() {
            let inner = &self.layers[2 * l];
            let outer = &self.layers[2 * l + 1];
            let nodes = outer.rows();
            let input = &ws.acts[l];
            let z = &ws.pre[l];
            ws.delta_next.clear();
            ws.delta_next.resize(TREE_ARITY * nodes, 0.0);
            let (head, tail) = grad.split_at_mut(ranges[2 * l + 1].start);
            let g_inner = &mut head[ranges[2 * l].clone()];
            let g_outer = &mut tail[..ranges[2 * l + 1].len()];
            for j in 0..nodes {
                let d = ws.delta[j];
                if d == 0.0 {
                    continue;
                }
                let (left, right) = (input[TREE_ARITY * j], input[TREE_ARITY * j + 1]);
                let a = outer.row(j);
                for i in 0..m {
                    let zi = z[j * m + i];
                    g_outer[j * m + i] += d * self.activation.value(zi);
                    let dz = d * a[i] * self.activation.derivative(zi);
                    if dz == 0.0 {
                        continue;
                    }
                    let row = inner.row(j * m + i);
                    let base = (j * m + i) * (TREE_ARITY + 1);
                    g_inner[base] += dz * left;
                    g_inner[base + 1] += dz * right;
                    g_inner[base + 2] += dz;
                    ws.delta_next[TREE_ARITY * j] += dz * row[0];
                    ws.delta_next[TREE_ARITY * j + 1] += dz * row[1];
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_next);
        }
        out
    }
}
