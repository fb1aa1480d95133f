//! Shallow, binary-tree and dense networks with exact gradients and the
//! layerwise `(ρ, V)` decomposition.

mod activation;
mod arch;
mod decomposition;
mod network;
pub mod serialize;

pub use activation::{Activation, DEFAULT_SMOOTHING};
pub use arch::{param_count, ArchitectureSpec, TREE_ARITY};
pub use decomposition::{decompose, RhoVDecomposition};
pub use network::{Network, Workspace};
