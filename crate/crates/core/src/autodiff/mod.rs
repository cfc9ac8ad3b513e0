//! Dense tensors with reverse-mode differentiation, MLPs and optimizers.
//!
//! Graphs are rebuilt on every forward pass. Parameters live outside the
//! graph in a [`ParamStore`] and are pulled in as leaves, which keeps the
//! alternating updates of adversarial training simple: each player owns an
//! [`Optimizer`] over its own parameter ids.

mod checkpoint;
mod gradcheck;
mod graph;
mod mlp;
mod optim;
mod tensor;

use thiserror::Error;

pub use checkpoint::{from_entries, load_into, to_entries, CheckpointEntry};
pub use gradcheck::finite_difference_check;
pub use graph::{sigmoid, softplus, Gradients, Graph, Param, ParamId, ParamStore, Var};
pub use mlp::{build_mlp, Activation, Linear, Mlp, MlpSpec, OutputActivation};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("numeric domain error: {0}")]
    Domain(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("no gradient for parameter {0}")]
    MissingGradient(String),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
}

#[cfg(test)]
mod tests;
