use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arity of every constituent in a tree architecture.
pub const TREE_ARITY: usize = 2;

/// Network architecture.
///
/// * `Shallow`: one hidden layer of `units` ridge units `a σ(<w,x> + b)`.
/// * `BinaryTree`: `input_dim - 1` internal nodes, each a sum of
///   `units_per_node` ridge units of its two children.
/// * `Dense`: a stack of bias-free layers of the given widths ending in one
///   output; `input_bias` pins an extra constant-1 input coordinate. With no
///   hidden layers it is the linear model `wᵀx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchitectureSpec {
    Shallow { input_dim: usize, units: usize },
    BinaryTree { input_dim: usize, units_per_node: usize },
    Dense { input_dim: usize, hidden: Vec<usize>, input_bias: bool },
}

impl ArchitectureSpec {
    pub fn linear(input_dim: usize) -> Self {
        ArchitectureSpec::Dense { input_dim, hidden: Vec::new(), input_bias: false }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ArchitectureSpec::Shallow { input_dim, .. }
            | ArchitectureSpec::BinaryTree { input_dim, .. }
            | ArchitectureSpec::Dense { input_dim, .. } => *input_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ArchitectureSpec::Shallow { input_dim, .. } | ArchitectureSpec::Dense { input_dim, .. } => {
                if *input_dim == 0 {
                    return Err(Error::Spec("input dimension must be positive".into()));
                }
            }
            ArchitectureSpec::BinaryTree { input_dim, .. } => {
                if *input_dim < TREE_ARITY || !input_dim.is_power_of_two() {
                    return Err(Error::Spec(format!(
                        "binary tree needs an input dimension that is a power of 2, got {input_dim}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of tree levels (`log2 n`); zero for non-tree architectures.
    pub fn tree_depth(&self) -> usize {
        match self {
            ArchitectureSpec::BinaryTree { input_dim, .. } => input_dim.trailing_zeros() as usize,
            _ => 0,
        }
    }

    /// Total number of hidden units.
    pub fn unit_count(&self) -> usize {
        match self {
            ArchitectureSpec::Shallow { units, .. } => *units,
            ArchitectureSpec::BinaryTree { input_dim, units_per_node } => (input_dim - 1) * units_per_node,
            ArchitectureSpec::Dense { hidden, .. } => hidden.iter().sum(),
        }
    }

    /// Shapes `(rows, cols)` of the weight matrices, in layer order.
    ///
    /// A tree contributes two matrices per level: the inner ridge weights
    /// (one row `[v_left, v_right, t]` per unit) and the outer unit
    /// coefficients (one row of `units_per_node` per node).
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match self {
            ArchitectureSpec::Shallow { input_dim, units } => vec![(*units, input_dim + 1), (1, *units)],
            ArchitectureSpec::Dense { input_dim, hidden, input_bias } => {
                let mut shapes = Vec::with_capacity(hidden.len() + 1);
                let mut fan_in = input_dim + usize::from(*input_bias);
                for &h in hidden {
                    shapes.push((h, fan_in));
                    fan_in = h;
                }
                shapes.push((1, fan_in));
                shapes
            }
            ArchitectureSpec::BinaryTree { input_dim, units_per_node } => {
                let mut shapes = Vec::new();
                let mut nodes = *input_dim;
                while nodes > 1 {
                    nodes /= TREE_ARITY;
                    shapes.push((nodes * units_per_node, TREE_ARITY + 1));
                    shapes.push((nodes, *units_per_node));
                }
                shapes
            }
        }
    }

    /// Fan-in used to scale the uniform initialisation of each layer.
    pub(crate) fn fan_ins(&self) -> Vec<usize> {
        self.layer_shapes().iter().map(|&(_, c)| c).collect()
    }
}

/// Number of trainable parameters: `(n + 2) N` for a shallow net with `N`
/// units, `4 N` with `N = (n - 1) M` for a binary tree with `M` units per
/// node, and the sum of matrix sizes for a dense stack.
pub fn param_count(spec: &ArchitectureSpec) -> Result<usize> {
    spec.validate()?;
    Ok(match spec {
        ArchitectureSpec::Shallow { input_dim, units } => (input_dim + 2) * units,
        ArchitectureSpec::BinaryTree { .. } => 4 * spec.unit_count(),
        ArchitectureSpec::Dense { .. } => spec.layer_shapes().iter().map(|(r, c)| r * c).sum(),
    })
}
