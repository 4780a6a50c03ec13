//! Heterogeneous graph learning for land-use intensity regression.
//!
//! The crate covers the whole pipeline: typed mobility graphs and their CSV
//! formats ([`graph`]), a small reverse-mode autodiff engine ([`tensor`],
//! [`tape`]), the heterogeneous graph transformer and two baselines
//! ([`model`]), multi-task training and evaluation ([`train`]), gradient
//! attribution ([`attribution`]), counterfactual subgraph search
//! ([`counterfactual`]) and a seeded synthetic city ([`synth`]).

pub mod attribution;
pub mod counterfactual;
pub mod graph;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use graph::{HeteroGraph, Schema};
pub use model::{HyperParams, ModelKind, ModelParams};
pub use tape::{Tape, Var};
pub use tensor::{Tensor, TensorError};
