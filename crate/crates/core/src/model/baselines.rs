//! Type-blind baselines: a dense network on node features alone and a
//! graph convolution over the symmetric-normalised adjacency with self-loops.

use super::{output_head, BoundParams, ModelError, ModelParams, ParamKey, Role};
use crate::graph::HeteroGraph;
use crate::tape::{Tape, Var};

fn dense(tape: &mut Tape, layer: usize, h: Var, params: &BoundParams) -> Result<Var, ModelError> {
    let w = params.get(&ParamKey::new(layer, Role::Dense))?;
    let b = params.get(&ParamKey::new(layer, Role::DenseBias))?;
    let z = tape.matmul(h, w)?;
    let z = tape.add_row_bias(z, b)?;
    Ok(tape.relu(z))
}

/// `relu(h W + b)` per layer, edges ignored.
pub(crate) fn mlp_forward_on(
    model: &ModelParams,
    tape: &mut Tape,
    x: Var,
    params: &BoundParams,
) -> Result<Var, ModelError> {
    let mut h = x;
    for layer in 1..=model.hyper.layers {
        h = dense(tape, layer, h, params)?;
    }
    output_head(model, tape, h, params)
}

/// `relu((Â h) W + b)` per layer with `Â = D^{-1/2}(A+I)D^{-1/2}`.
pub(crate) fn gcn_forward_on(
    model: &ModelParams,
    tape: &mut Tape,
    graph: &HeteroGraph,
    x: Var,
    params: &BoundParams,
) -> Result<Var, ModelError> {
    let (a_hat, a_hat_t) = graph.topology().gcn_operator();
    let mut h = x;
    for layer in 1..=model.hyper.layers {
        let mixed = tape.sparse_matmul(a_hat.clone(), a_hat_t.clone(), h)?;
        h = dense(tape, layer, mixed, params)?;
    }
    output_head(model, tape, h, params)
}
