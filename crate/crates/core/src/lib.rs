//! A numerical laboratory for the dynamics of positively homogeneous
//! networks trained with the exponential loss: unit-norm constrained
//! gradient flows and weight normalization, linear-model convergence
//! rates, margin maximization, Langevin occupancy of loss landscapes and
//! shallow-versus-compositional approximation experiments.

pub mod approx;
pub mod error;
pub mod flow;
pub mod harness;
pub mod langevin;
pub mod linalg;
pub mod linear;
pub mod margin;
pub mod net;
pub mod rng;

pub use error::{Error, Result};
