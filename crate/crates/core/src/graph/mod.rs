//! Heterogeneous graph data model.
//!
//! Nodes are stations with a type (tube, bus, bike by default), coordinates
//! and a ridership profile; edges are typed and directed. The graph is
//! immutable once built and can be shared across threads.

mod catchment;
mod io;
mod split;
mod topology;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub(crate) use catchment::argmax;
pub use catchment::{haversine_m, label_by_catchment, label_points, LandUseTargets, Poi, EARTH_RADIUS_M};
pub use io::{load_graph, read_edges, read_nodes, read_pois, write_edges, write_nodes, write_pois};
pub use split::{split, SplitMasks, SplitRatios};
pub use topology::Topology;

/// The six land-use indicators, in column order.
pub const INDICATORS: [&str; 6] = ["office", "sustenance", "transport", "retail", "leisure", "residence"];

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{file}: line {line}: {message}")]
    Ingest {
        file: String,
        line: u64,
        message: String,
    },
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("edge references unknown node id `{id}`")]
    DanglingEdge { id: String },
    #[error("duplicate node id `{id}`")]
    DuplicateNode { id: String },
    #[error("node `{id}` has {found} features, expected {expected}")]
    Arity {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("node `{id}` has a negative or non-finite feature value")]
    BadFeature { id: String },
    #[error("index {index} out of range ({len} entries)")]
    Index { index: usize, len: usize },
    #[error("graph is not heterogeneous: {node_types} node types + {edge_types} edge types must exceed 2")]
    NotHeterogeneous { node_types: usize, edge_types: usize },
    #[error("labeling failed: {0}")]
    Labeling(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// An edge type together with the ordinal code used when averaging edge types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTypeSpec {
    pub name: String,
    pub code: i64,
}

/// Node/edge vocabularies and feature arity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub node_types: Vec<String>,
    pub edge_types: Vec<EdgeTypeSpec>,
    pub feature_count: usize,
}

impl Default for Schema {
    fn default() -> Self {
        let edge_types = ["primary", "secondary", "tertiary", "residential", "unclassified", "tube-line"]
            .iter()
            .zip(0..)
            .map(|(name, code)| EdgeTypeSpec {
                name: (*name).to_string(),
                code,
            })
            .collect();
        Self {
            node_types: vec!["tube".into(), "bus".into(), "bike".into()],
            edge_types,
            feature_count: 64,
        }
    }
}

impl Schema {
    pub fn node_type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t == name)
    }

    pub fn edge_type_index(&self, name: &str) -> Option<usize> {
        self.edge_types.iter().position(|t| t.name == name)
    }

    pub fn edge_code(&self, edge_type: usize) -> i64 {
        self.edge_types[edge_type].code
    }

    /// Time-bin label for feature column `k`: 15-minute bins from 06:00.
    pub fn feature_label(&self, k: usize) -> String {
        let minutes = 6 * 60 + 15 * k;
        format!("{:02}:{:02}", minutes / 60, minutes % 60)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let (a, r) = (self.node_types.len(), self.edge_types.len());
        if a + r <= 2 {
            return Err(GraphError::NotHeterogeneous {
                node_types: a,
                edge_types: r,
            });
        }
        if self.feature_count == 0 {
            return Err(GraphError::Config("feature_count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: String,
    pub node_type: usize,
    pub lon: f64,
    pub lat: f64,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeRecord {
    pub src: usize,
    pub dst: usize,
    pub edge_type: usize,
}

/// Node metadata without the feature row (features live in one matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMeta {
    pub id: String,
    pub node_type: usize,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Debug, Clone)]
pub struct HeteroGraph {
    schema: Arc<Schema>,
    nodes: Vec<NodeMeta>,
    index: HashMap<String, usize>,
    features: Tensor,
    edges: Vec<EdgeRecord>,
    topology: Arc<Topology>,
}

impl PartialEq for HeteroGraph {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.nodes == other.nodes
            && self.features == other.features
            && self.edges == other.edges
    }
}

impl HeteroGraph {
    /// Validates and builds a graph. Edge endpoints are node indices.
    pub fn new(schema: Schema, nodes: Vec<NodeRecord>, edges: Vec<EdgeRecord>) -> Result<Self, GraphError> {
        schema.validate()?;
        let f = schema.feature_count;
        let mut index = HashMap::with_capacity(nodes.len());
        let mut metas = Vec::with_capacity(nodes.len());
        let mut data = Vec::with_capacity(nodes.len() * f);
        for (i, node) in nodes.into_iter().enumerate() {
            if node.features.len() != f {
                return Err(GraphError::Arity {
                    id: node.id,
                    expected: f,
                    found: node.features.len(),
                });
            }
            if node.features.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(GraphError::BadFeature { id: node.id });
            }
            if node.node_type >= schema.node_types.len() {
                return Err(GraphError::Index {
                    index: node.node_type,
                    len: schema.node_types.len(),
                });
            }
            if index.insert(node.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode { id: node.id });
            }
            data.extend_from_slice(&node.features);
            metas.push(NodeMeta {
                id: node.id,
                node_type: node.node_type,
                lon: node.lon,
                lat: node.lat,
            });
        }
        let features = Tensor::from_parts(metas.len(), f, data);
        Self::assemble(Arc::new(schema), metas, index, features, edges)
    }

    fn assemble(
        schema: Arc<Schema>,
        nodes: Vec<NodeMeta>,
        index: HashMap<String, usize>,
        features: Tensor,
        edges: Vec<EdgeRecord>,
    ) -> Result<Self, GraphError> {
        for e in &edges {
            for end in [e.src, e.dst] {
                if end >= nodes.len() {
                    return Err(GraphError::Index {
                        index: end,
                        len: nodes.len(),
                    });
                }
            }
            if e.edge_type >= schema.edge_types.len() {
                return Err(GraphError::Index {
                    index: e.edge_type,
                    len: schema.edge_types.len(),
                });
            }
        }
        let topology = Arc::new(Topology::build(
            nodes.iter().map(|n| n.node_type).collect(),
            &edges,
            schema.node_types.len(),
            schema.edge_types.len(),
        ));
        Ok(Self {
            schema,
            nodes,
            index,
            features,
            edges,
            topology,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[NodeMeta] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &NodeMeta {
        &self.nodes[i]
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node_type_name(&self, i: usize) -> &str {
        &self.schema.node_types[self.nodes[i].node_type]
    }

    pub fn edge_code(&self, e: usize) -> i64 {
        self.schema.edge_code(self.edges[e].edge_type)
    }

    /// Node types that occur at least once.
    pub fn present_node_types(&self) -> Vec<usize> {
        let mut seen = vec![false; self.schema.node_types.len()];
        self.nodes.iter().for_each(|n| seen[n.node_type] = true);
        (0..seen.len()).filter(|&t| seen[t]).collect()
    }

    pub fn present_edge_types(&self) -> Vec<usize> {
        let mut seen = vec![false; self.schema.edge_types.len()];
        self.edges.iter().for_each(|e| seen[e.edge_type] = true);
        (0..seen.len()).filter(|&t| seen[t]).collect()
    }

    /// Same structure with a different feature matrix.
    pub fn with_features(&self, features: Tensor) -> Result<Self, GraphError> {
        if features.shape() != self.features.shape() {
            return Err(GraphError::Arity {
                id: "<feature matrix>".into(),
                expected: self.features.len(),
                found: features.len(),
            });
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Same nodes and features with a different edge list.
    pub fn with_edges(&self, edges: Vec<EdgeRecord>) -> Result<Self, GraphError> {
        Self::assemble(
            self.schema.clone(),
            self.nodes.clone(),
            self.index.clone(),
            self.features.clone(),
            edges,
        )
    }

    /// True when both graphs have the same nodes, types and edges.
    pub fn same_structure(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.edges == other.edges
            && self.nodes.len() == other.nodes.len()
            && self
                .nodes
                .iter()
                .zip(&other.nodes)
                .all(|(a, b)| a.id == b.id && a.node_type == b.node_type)
    }

    /// Induced subgraph on `keep` (node indices, in the order given).
    pub fn induced(&self, keep: &[usize]) -> Result<Self, GraphError> {
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::with_capacity(keep.len());
        let mut index = HashMap::with_capacity(keep.len());
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.nodes.len() {
                return Err(GraphError::Index {
                    index: old,
                    len: self.nodes.len(),
                });
            }
            remap[old] = new;
            index.insert(self.nodes[old].id.clone(), new);
            nodes.push(self.nodes[old].clone());
        }
        let features = self.features.gather_rows(keep).expect("indices checked");
        let edges = self
            .edges
            .iter()
            .filter(|e| remap[e.src] != usize::MAX && remap[e.dst] != usize::MAX)
            .map(|e| EdgeRecord {
                src: remap[e.src],
                dst: remap[e.dst],
                edge_type: e.edge_type,
            })
            .collect();
        Self::assemble(self.schema.clone(), nodes, index, features, edges)
    }

    /// Keeps nodes whose type is in `types` and the edges among them.
    /// Returns the subgraph and the original index of every kept node.
    pub fn retain_node_types(&self, types: &[usize]) -> Result<(Self, Vec<usize>), GraphError> {
        let keep: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| types.contains(&self.nodes[i].node_type))
            .collect();
        Ok((self.induced(&keep)?, keep))
    }

    /// Per-column min-max scaling.
    pub fn normalize_features(&self, mode: NormalizeMode) -> (Self, FeatureScaling) {
        let f = self.schema.feature_count;
        let x = &self.features;
        let mut min = vec![f64::INFINITY; f];
        let mut max = vec![f64::NEG_INFINITY; f];
        for r in 0..x.rows() {
            for (k, &v) in x.row(r).iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        let scaling = FeatureScaling { mode, min, max };
        let scaled = scaling.apply(x);
        (self.with_features(scaled).expect("shape preserved"), scaling)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizeMode {
    #[default]
    MinMax,
    None,
}

/// Constants needed to map scaled features back to ridership counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub mode: NormalizeMode,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureScaling {
    /// Constant columns map to 0.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        if self.mode == NormalizeMode::None || x.rows() == 0 {
            return x.clone();
        }
        let cols = x.cols();
        let mut data = x.to_vec();
        for row in data.chunks_mut(cols) {
            for (k, v) in row.iter_mut().enumerate() {
                let span = self.max[k] - self.min[k];
                *v = if span > 0.0 { (*v - self.min[k]) / span } else { 0.0 };
            }
        }
        Tensor::from_parts(x.rows(), cols, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_graph() -> HeteroGraph {
        let schema = Schema {
            feature_count: 3,
            ..Schema::default()
        };
        let nodes = vec![
            NodeRecord { id: "a".into(), node_type: 0, lon: 0.0, lat: 0.0, features: vec![0.0, 3.0, 1.0] },
            NodeRecord { id: "b".into(), node_type: 1, lon: 0.01, lat: 0.0, features: vec![5.0, 3.0, 2.0] },
            NodeRecord { id: "c".into(), node_type: 2, lon: 0.02, lat: 0.0, features: vec![10.0, 3.0, 4.0] },
        ];
        let edges = vec![
            EdgeRecord { src: 0, dst: 1, edge_type: 0 },
            EdgeRecord { src: 1, dst: 2, edge_type: 3 },
        ];
        HeteroGraph::new(schema, nodes, edges).unwrap()
    }

    #[test]
    fn min_max_columns() {
        let (g, scaling) = tiny_graph().normalize_features(NormalizeMode::MinMax);
        let x = g.features();
        assert_eq!((0..3).map(|r| x.get(r, 0)).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        assert_eq!((0..3).map(|r| x.get(r, 1)).collect::<Vec<_>>(), vec![0.0, 0.0, 0.0]);
        assert_eq!(scaling.min[0], 0.0);
        assert_eq!(scaling.max[0], 10.0);
        let (again, _) = g.normalize_features(NormalizeMode::MinMax);
        assert_eq!(again.features(), g.features());
    }

    #[test]
    fn none_mode_is_identity() {
        let g = tiny_graph();
        let (same, _) = g.normalize_features(NormalizeMode::None);
        assert_eq!(same, g);
    }

    #[test]
    fn homogeneous_schema_rejected() {
        let schema = Schema {
            node_types: vec!["bus".into()],
            edge_types: vec![EdgeTypeSpec { name: "road".into(), code: 0 }],
            feature_count: 1,
        };
        assert!(matches!(
            HeteroGraph::new(schema, vec![], vec![]),
            Err(GraphError::NotHeterogeneous { .. })
        ));
    }

    #[test]
    fn retain_types_keeps_induced_edges() {
        let g = tiny_graph();
        let (sub, kept) = g.retain_node_types(&[1, 2]).unwrap();
        assert_eq!(kept, vec![1, 2]);
        assert_eq!(sub.num_nodes(), 2);
        assert_eq!(sub.edges(), &[EdgeRecord { src: 0, dst: 1, edge_type: 3 }]);
        assert_eq!(sub.index_of("c"), Some(1));
    }

    #[test]
    fn time_bin_labels() {
        let s = Schema::default();
        assert_eq!(s.feature_label(0), "06:00");
        assert_eq!(s.feature_label(1), "06:15");
        assert_eq!(s.feature_label(63), "21:45");
    }

    #[test]
    fn negative_features_rejected() {
        let schema = Schema { feature_count: 1, ..Schema::default() };
        let nodes = vec![NodeRecord { id: "x".into(), node_type: 0, lon: 0.0, lat: 0.0, features: vec![-1.0] }];
        assert!(matches!(HeteroGraph::new(schema, nodes, vec![]), Err(GraphError::BadFeature { .. })));
    }
}
