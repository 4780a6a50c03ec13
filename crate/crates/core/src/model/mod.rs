//! Node regression models: the heterogeneous graph transformer and the MLP
//! and GCN baselines.
//!
//! All weights are stored in row-major "input x output" form, so a layer is
//! `rows · W`. Every model keeps its parameters in one keyed store, which
//! makes the optimizer and the snapshot format model-agnostic.

pub mod baselines;
pub mod hgt;
pub mod sampling;
mod snapshot;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{HeteroGraph, Schema, INDICATORS};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_FORMAT, SNAPSHOT_VERSION};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("no parameter {0}")]
    MissingParam(String),
    #[error("node type `{0}` has no projection matrix")]
    MissingNodeType(String),
    #[error("invalid hyper-parameters: {0}")]
    Hyper(String),
    #[error("feature matrix is {found:?}, model expects {expected} columns for {nodes} nodes")]
    Input {
        expected: usize,
        nodes: usize,
        found: (usize, usize),
    },
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hgt,
    Mlp,
    Gcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Mlp, ModelKind::Gcn, ModelKind::Hgt];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hgt => "hgt",
            ModelKind::Mlp => "mlp",
            ModelKind::Gcn => "gcn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hgt" => Ok(ModelKind::Hgt),
            "mlp" | "nn" => Ok(ModelKind::Mlp),
            "gcn" => Ok(ModelKind::Gcn),
            other => Err(ModelError::Hyper(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub outputs: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            input_dim: 64,
            hidden: 128,
            heads: 2,
            layers: 2,
            outputs: INDICATORS.len(),
        }
    }
}

impl HyperParams {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads.max(1)
    }

    pub fn validate(&self, kind: ModelKind) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.outputs == 0 || self.hidden == 0 {
            return Err(ModelError::Hyper("dimensions must be positive".into()));
        }
        if kind == ModelKind::Hgt && (self.heads == 0 || self.hidden % self.heads != 0) {
            return Err(ModelError::Hyper(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

/// What a weight matrix does inside its model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// Per node type input projection.
    Projection,
    /// Per head, per source node type message matrix.
    MultiHead,
    /// Per edge type message transform, shared by heads.
    MessagePassing,
    Query,
    Key,
    /// Per head bilinear attention form.
    Attention,
    /// Per target node type aggregation matrix.
    Aggregation,
    Dense,
    DenseBias,
    Output,
    OutputBias,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamKey {
    pub layer: usize,
    pub role: Role,
    pub head: Option<usize>,
    pub type_key: Option<String>,
}

impl ParamKey {
    pub fn new(layer: usize, role: Role) -> Self {
        Self {
            layer,
            role,
            head: None,
            type_key: None,
        }
    }

    pub fn head(mut self, head: usize) -> Self {
        self.head = Some(head);
        self
    }

    pub fn typed(mut self, type_key: &str) -> Self {
        self.type_key = Some(type_key.to_string());
        self
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {} {:?}", self.layer, self.role)?;
        if let Some(h) = self.head {
            write!(f, " head {h}")?;
        }
        if let Some(t) = &self.type_key {
            write!(f, " [{t}]")?;
        }
        Ok(())
    }
}

/// Learnable weights of one model plus the settings that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub hyper: HyperParams,
    pub node_types: Vec<String>,
    pub edge_types: Vec<String>,
    store: BTreeMap<ParamKey, Tensor>,
}

/// Parameters recorded on a tape for one forward pass.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: BTreeMap<ParamKey, Var>,
}

impl BoundParams {
    pub fn get(&self, key: &ParamKey) -> Result<Var, ModelError> {
        self.vars
            .get(key)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(key.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Var)> {
        self.vars.iter()
    }
}

/// Model output for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// nodes x indicators.
    pub values: Tensor,
    pub model: ModelKind,
}

impl ModelParams {
    /// Shapes of every matrix the model needs for `schema`.
    pub fn layout(kind: ModelKind, hyper: &HyperParams, schema: &Schema) -> Vec<(ParamKey, (usize, usize))> {
        let HyperParams {
            input_dim,
            hidden,
            heads,
            layers,
            outputs,
        } = *hyper;
        let mut out = Vec::new();
        match kind {
            ModelKind::Hgt => {
                let dk = hyper.head_dim();
                for t in &schema.node_types {
                    out.push((ParamKey::new(0, Role::Projection).typed(t), (input_dim, hidden)));
                }
                for l in 1..=layers {
                    for h in 0..heads {
                        for t in &schema.node_types {
                            out.push((ParamKey::new(l, Role::MultiHead).head(h).typed(t), (hidden, dk)));
                        }
                        out.push((ParamKey::new(l, Role::Query).head(h), (hidden, dk)));
                        out.push((ParamKey::new(l, Role::Key).head(h), (hidden, dk)));
                        out.push((ParamKey::new(l, Role::Attention).head(h), (dk, dk)));
                    }
                    for e in &schema.edge_types {
                        out.push((ParamKey::new(l, Role::MessagePassing).typed(&e.name), (dk, dk)));
                    }
                    for t in &schema.node_types {
                        out.push((ParamKey::new(l, Role::Aggregation).typed(t), (hidden, hidden)));
                    }
                }
            }
            ModelKind::Mlp | ModelKind::Gcn => {
                for l in 1..=layers {
                    let fan_in = if l == 1 { input_dim } else { hidden };
                    out.push((ParamKey::new(l, Role::Dense), (fan_in, hidden)));
                    out.push((ParamKey::new(l, Role::DenseBias), (1, hidden)));
                }
            }
        }
        let head_in = if kind == ModelKind::Hgt || layers > 0 { hidden } else { input_dim };
        out.push((ParamKey::new(layers + 1, Role::Output), (head_in, outputs)));
        out.push((ParamKey::new(layers + 1, Role::OutputBias), (1, outputs)));
        out
    }

    /// Seeded initialisation: weights uniform in ±1/√fan_in, biases zero.
    pub fn init(kind: ModelKind, hyper: HyperParams, schema: &Schema, seed: u64) -> Result<Self, ModelError> {
        hyper.validate(kind)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = BTreeMap::new();
        let mut layout = Self::layout(kind, &hyper, schema);
        layout.sort_by(|a, b| a.0.cmp(&b.0));
        for (key, (rows, cols)) in layout {
            let value = if matches!(key.role, Role::DenseBias | Role::OutputBias) {
                Tensor::zeros(rows, cols)
            } else {
                let bound = 1.0 / (rows as f64).sqrt();
                Tensor::from_parts(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect())
            };
            store.insert(key, value);
        }
        Ok(Self {
            kind,
            hyper,
            node_types: schema.node_types.clone(),
            edge_types: schema.edge_types.iter().map(|e| e.name.clone()).collect(),
            store,
        })
    }

    /// Builds from explicit matrices; shapes are checked against the layout.
    pub fn from_store(
        kind: ModelKind,
        hyper: HyperParams,
        schema: &Schema,
        store: BTreeMap<ParamKey, Tensor>,
    ) -> Result<Self, ModelError> {
        hyper.validate(kind)?;
        for (key, shape) in Self::layout(kind, &hyper, schema) {
            match store.get(&key) {
                None => return Err(ModelError::MissingParam(key.to_string())),
                Some(t) if t.shape() != shape => {
                    return Err(ModelError::Snapshot(format!(
                        "{key} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(Self {
            kind,
            hyper,
            node_types: schema.node_types.clone(),
            edge_types: schema.edge_types.iter().map(|e| e.name.clone()).collect(),
            store,
        })
    }

    pub fn get(&self, key: &ParamKey) -> Option<&Tensor> {
        self.store.get(key)
    }

    /// Replaces a matrix; the shape must not change.
    pub fn set(&mut self, key: &ParamKey, value: Tensor) -> Result<(), ModelError> {
        let slot = self
            .store
            .get_mut(key)
            .ok_or_else(|| ModelError::MissingParam(key.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(ModelError::Snapshot(format!(
                "{key}: cannot replace {:?} with {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// Removes a matrix (used to test missing-parameter handling).
    pub fn remove(&mut self, key: &ParamKey) -> Option<Tensor> {
        self.store.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Tensor)> {
        self.store.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&ParamKey, &mut Tensor)> {
        self.store.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.store.values().map(Tensor::len).sum()
    }

    /// All weights mapped through `f`, e.g. zeroed.
    pub fn map(&self, f: impl Fn(&ParamKey, &Tensor) -> Tensor) -> Self {
        let mut out = self.clone();
        for (k, v) in out.store.iter_mut() {
            *v = f(k, v);
        }
        out
    }

    /// Records every weight on `tape`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .store
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable)))
            .collect();
        BoundParams { vars }
    }

    /// Number of message-passing hops that can influence a node's output.
    pub fn receptive_hops(&self) -> usize {
        match self.kind {
            ModelKind::Mlp => 0,
            ModelKind::Hgt | ModelKind::Gcn => self.hyper.layers,
        }
    }

    fn check_input(&self, graph: &HeteroGraph, x: &Tensor) -> Result<(), ModelError> {
        if x.shape() != (graph.num_nodes(), self.hyper.input_dim) {
            return Err(ModelError::Input {
                expected: self.hyper.input_dim,
                nodes: graph.num_nodes(),
                found: x.shape(),
            });
        }
        Ok(())
    }

    /// Records the forward pass for `graph`'s structure with features `x`.
    pub fn forward_on(&self, tape: &mut Tape, graph: &HeteroGraph, x: Var, params: &BoundParams) -> Result<Var, ModelError> {
        self.check_input(graph, tape.value(x))?;
        match self.kind {
            ModelKind::Hgt => hgt::forward_on(self, tape, graph, x, params),
            ModelKind::Mlp => baselines::mlp_forward_on(self, tape, x, params),
            ModelKind::Gcn => baselines::gcn_forward_on(self, tape, graph, x, params),
        }
    }

    /// Predictions for every node of `graph` using its own features.
    pub fn predict(&self, graph: &HeteroGraph) -> Result<Prediction, ModelError> {
        self.predict_with(graph, graph.features())
    }

    pub fn predict_with(&self, graph: &HeteroGraph, features: &Tensor) -> Result<Prediction, ModelError> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(features.clone());
        let y = self.forward_on(&mut tape, graph, x, &params)?;
        Ok(Prediction {
            values: tape.value(y).clone(),
            model: self.kind,
        })
    }
}

/// `y = h·W_out + b_out`.
pub(crate) fn output_head(
    model: &ModelParams,
    tape: &mut Tape,
    h: Var,
    params: &BoundParams,
) -> Result<Var, ModelError> {
    let layer = model.hyper.layers + 1;
    let w = params.get(&ParamKey::new(layer, Role::Output))?;
    let b = params.get(&ParamKey::new(layer, Role::OutputBias))?;
    let y = tape.matmul(h, w)?;
    Ok(tape.add_row_bias(y, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_complete_for_default_hgt() {
        let schema = Schema::default();
        let p = ModelParams::init(ModelKind::Hgt, HyperParams::default(), &schema, 0).unwrap();
        // 3 projections, then per layer: 2 heads x (3 + 3) + 6 edge + 3 aggregation = 21, plus 2 head matrices.
        assert_eq!(p.iter().count(), 3 + 2 * 21 + 2);
        let mh = p.get(&ParamKey::new(1, Role::MultiHead).head(1).typed("bike")).unwrap();
        assert_eq!(mh.shape(), (128, 64));
        let a = p.get(&ParamKey::new(2, Role::Attention).head(0)).unwrap();
        assert_eq!(a.shape(), (64, 64));
    }

    #[test]
    fn heads_must_divide_hidden() {
        let hyper = HyperParams { hidden: 10, heads: 3, ..HyperParams::default() };
        assert!(matches!(
            ModelParams::init(ModelKind::Hgt, hyper, &Schema::default(), 0),
            Err(ModelError::Hyper(_))
        ));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let s = Schema::default();
        let a = ModelParams::init(ModelKind::Mlp, HyperParams::default(), &s, 3).unwrap();
        let b = ModelParams::init(ModelKind::Mlp, HyperParams::default(), &s, 3).unwrap();
        let c = ModelParams::init(ModelKind::Mlp, HyperParams::default(), &s, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let w = a.get(&ParamKey::new(1, Role::Dense)).unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 1.0 / 8.0));
        assert!(a.get(&ParamKey::new(1, Role::DenseBias)).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("HGT".parse::<ModelKind>().unwrap(), ModelKind::Hgt);
        assert_eq!("nn".parse::<ModelKind>().unwrap(), ModelKind::Mlp);
        assert!("gat".parse::<ModelKind>().is_err());
    }
}
