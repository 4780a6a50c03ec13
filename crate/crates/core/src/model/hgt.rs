//! Heterogeneous graph transformer layers.
//!
//! With row vectors and input-x-output weights a layer is:
//!
//! ```text
//! h0_i        = x_i · P[type(i)]
//! m(s,e,t)    = concat_τ ( (h_s · MH[τ, type(s)]) · MP[type(e)] )
//! head_τ(e)   = (h_s · Q_τ) · A_τ · (h_t · K_τ)ᵀ / sqrt(d/θ)
//! α_τ(e)      = softmax of head_τ over the edges entering t
//! α(e)        = mean_τ α_τ(e)
//! h'_t        = (Σ_{e into t} α(e) m(s,e,t)) · AG[type(t)] + h_t
//! ```
//!
//! followed by ReLU after every layer and a linear output head. A node with
//! no incoming edges keeps its previous representation.

use std::sync::Arc;

use super::{output_head, BoundParams, ModelError, ModelParams, ParamKey, Role};
use crate::graph::HeteroGraph;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `Σ_t scatter(gather(h, nodes_t) · W_t)`: a linear map chosen by node type.
fn typed_linear(
    tape: &mut Tape,
    graph: &HeteroGraph,
    h: Var,
    out_dim: usize,
    key: impl Fn(&str) -> ParamKey,
    params: &BoundParams,
    missing: impl Fn(&str) -> ModelError,
) -> Result<Var, ModelError> {
    let topo = graph.topology();
    let n = topo.num_nodes();
    let mut acc: Option<Var> = None;
    for t in 0..topo.num_node_types() {
        let members = topo.nodes_of_type(t);
        if members.is_empty() {
            continue;
        }
        let name = &graph.schema().node_types[t];
        let w = params.get(&key(name)).map_err(|_| missing(name))?;
        let rows = tape.gather_rows(h, members.clone())?;
        let mapped = tape.matmul(rows, w)?;
        let placed = tape.scatter_rows(mapped, members.clone(), n)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, placed)?,
            None => placed,
        });
    }
    Ok(acc.unwrap_or_else(|| tape.constant(Tensor::zeros(n, out_dim))))
}

/// Initial representations, `|V| x d`.
pub fn project_on(
    model: &ModelParams,
    tape: &mut Tape,
    graph: &HeteroGraph,
    x: Var,
    params: &BoundParams,
) -> Result<Var, ModelError> {
    typed_linear(
        tape,
        graph,
        x,
        model.hyper.hidden,
        |t| ParamKey::new(0, Role::Projection).typed(t),
        params,
        |t| ModelError::MissingNodeType(t.to_string()),
    )
}

/// Messages for every edge in edge-list order, `|E| x d`.
pub fn messages_on(
    model: &ModelParams,
    tape: &mut Tape,
    graph: &HeteroGraph,
    layer: usize,
    h: Var,
    params: &BoundParams,
) -> Result<Var, ModelError> {
    let topo = graph.topology();
    let n_edges = topo.num_edges();
    let dk = model.hyper.head_dim();
    let mut heads = Vec::with_capacity(model.hyper.heads);
    for head in 0..model.hyper.heads {
        let per_node = typed_linear(
            tape,
            graph,
            h,
            dk,
            |t| ParamKey::new(layer, Role::MultiHead).head(head).typed(t),
            params,
            |t| ModelError::MissingParam(ParamKey::new(layer, Role::MultiHead).head(head).typed(t).to_string()),
        )?;
        let mut acc: Option<Var> = None;
        for r in 0..topo.num_edge_types() {
            let positions = topo.edges_of_type(r);
            if positions.is_empty() {
                continue;
            }
            let name = &graph.schema().edge_types[r].name;
            let w = params.get(&ParamKey::new(layer, Role::MessagePassing).typed(name))?;
            let src = tape.gather_rows(per_node, topo.sources_of_edge_type(r).clone())?;
            let msg = tape.matmul(src, w)?;
            let placed = tape.scatter_rows(msg, positions.clone(), n_edges)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, placed)?,
                None => placed,
            });
        }
        heads.push(acc.unwrap_or_else(|| tape.constant(Tensor::zeros(n_edges, dk))));
    }
    Ok(tape.concat_cols(&heads)?)
}

/// Attention weights for every edge: the head-averaged weight (`|E| x 1`)
/// and the per-head weights.
pub fn attention_on(
    model: &ModelParams,
    tape: &mut Tape,
    graph: &HeteroGraph,
    layer: usize,
    h: Var,
    params: &BoundParams,
) -> Result<(Var, Vec<Var>), ModelError> {
    let topo = graph.topology();
    let scale = 1.0 / (model.hyper.head_dim() as f64).sqrt();
    let src: Arc<[usize]> = topo.edge_src().clone();
    let dst: Arc<[usize]> = topo.edge_dst().clone();
    let mut per_head = Vec::with_capacity(model.hyper.heads);
    for head in 0..model.hyper.heads {
        let wq = params.get(&ParamKey::new(layer, Role::Query).head(head))?;
        let wk = params.get(&ParamKey::new(layer, Role::Key).head(head))?;
        let wa = params.get(&ParamKey::new(layer, Role::Attention).head(head))?;
        let q = tape.matmul(h, wq)?;
        let k = tape.matmul(h, wk)?;
        let qa = tape.matmul(q, wa)?;
        let left = tape.gather_rows(qa, src.clone())?;
        let right = tape.gather_rows(k, dst.clone())?;
        let raw = tape.row_dot(left, right)?;
        let scaled = tape.scale(raw, scale);
        per_head.push(tape.segment_softmax(scaled, dst.clone())?);
    }
    let mut total = per_head[0];
    for &a in &per_head[1..] {
        total = tape.add(total, a)?;
    }
    let mean = tape.scale(total, 1.0 / per_head.len() as f64);
    Ok((mean, per_head))
}

/// Attention-weighted message sum, type-specific aggregation and residual.
pub fn aggregate_on(
    model: &ModelParams,
    tape: &mut Tape,
    graph: &HeteroGraph,
    layer: usize,
    h: Var,
    messages: Var,
    alpha: Var,
    params: &BoundParams,
) -> Result<Var, ModelError> {
    let topo = graph.topology();
    let weighted = tape.scale_rows(messages, alpha)?;
    let summed = tape.scatter_rows(weighted, topo.edge_dst().clone(), topo.num_nodes())?;
    let mapped = typed_linear(
        tape,
        graph,
        summed,
        model.hyper.hidden,
        |t| ParamKey::new(layer, Role::Aggregation).typed(t),
        params,
        |t| ModelError::MissingParam(ParamKey::new(layer, Role::Aggregation).typed(t).to_string()),
    )?;
    Ok(tape.add(mapped, h)?)
}

/// Final node representations before the output head.
pub fn encode_on(
    model: &ModelParams,
    tape: &mut Tape,
    graph: &HeteroGraph,
    x: Var,
    params: &BoundParams,
) -> Result<Var, ModelError> {
    let mut h = project_on(model, tape, graph, x, params)?;
    for layer in 1..=model.hyper.layers {
        let messages = messages_on(model, tape, graph, layer, h, params)?;
        let (alpha, _) = attention_on(model, tape, graph, layer, h, params)?;
        let next = aggregate_on(model, tape, graph, layer, h, messages, alpha, params)?;
        h = tape.relu(next);
    }
    Ok(h)
}

pub(crate) fn forward_on(
    model: &ModelParams,
    tape: &mut Tape,
    graph: &HeteroGraph,
    x: Var,
    params: &BoundParams,
) -> Result<Var, ModelError> {
    let h = encode_on(model, tape, graph, x, params)?;
    output_head(model, tape, h, params)
}

/// Tensor-level views of the individual layer stages, for inspection and tests.
pub struct Stages<'a> {
    model: &'a ModelParams,
    graph: &'a HeteroGraph,
}

impl<'a> Stages<'a> {
    pub fn new(model: &'a ModelParams, graph: &'a HeteroGraph) -> Self {
        Self { model, graph }
    }

    fn run<T>(&self, f: impl FnOnce(&mut Tape, &BoundParams) -> Result<T, ModelError>) -> Result<T, ModelError> {
        let mut tape = Tape::new();
        let params = self.model.bind(&mut tape, false);
        f(&mut tape, &params)
    }

    pub fn project(&self) -> Result<Tensor, ModelError> {
        self.run(|tape, p| {
            let x = tape.constant(self.graph.features().clone());
            let h = project_on(self.model, tape, self.graph, x, p)?;
            Ok(tape.value(h).clone())
        })
    }

    pub fn messages(&self, layer: usize, h_prev: &Tensor) -> Result<Tensor, ModelError> {
        self.run(|tape, p| {
            let h = tape.constant(h_prev.clone());
            let m = messages_on(self.model, tape, self.graph, layer, h, p)?;
            Ok(tape.value(m).clone())
        })
    }

    /// Head-averaged attention per edge and the per-head weights.
    pub fn attention(&self, layer: usize, h_prev: &Tensor) -> Result<(Tensor, Vec<Tensor>), ModelError> {
        self.run(|tape, p| {
            let h = tape.constant(h_prev.clone());
            let (mean, heads) = attention_on(self.model, tape, self.graph, layer, h, p)?;
            Ok((tape.value(mean).clone(), heads.iter().map(|&v| tape.value(v).clone()).collect()))
        })
    }

    pub fn aggregate(&self, layer: usize, h_prev: &Tensor, messages: &Tensor, alpha: &Tensor) -> Result<Tensor, ModelError> {
        self.run(|tape, p| {
            let h = tape.constant(h_prev.clone());
            let m = tape.constant(messages.clone());
            let a = tape.constant(alpha.clone());
            let out = aggregate_on(self.model, tape, self.graph, layer, h, m, a, p)?;
            Ok(tape.value(out).clone())
        })
    }
}
