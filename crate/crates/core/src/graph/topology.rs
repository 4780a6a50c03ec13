use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use super::EdgeRecord;
use crate::tape::SparseMatrix;

/// Index structures derived from a graph's node types and edge list, in the
/// shapes the message-passing models consume.
#[derive(Debug)]
pub struct Topology {
    num_nodes: usize,
    num_node_types: usize,
    num_edge_types: usize,
    node_type: Vec<usize>,
    edge_src: Arc<[usize]>,
    edge_dst: Arc<[usize]>,
    edge_type: Vec<usize>,
    nodes_by_type: Vec<Arc<[usize]>>,
    edges_by_type: Vec<Arc<[usize]>>,
    src_by_edge_type: Vec<Arc<[usize]>>,
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
    gcn: OnceLock<(Arc<SparseMatrix>, Arc<SparseMatrix>)>,
}

impl Topology {
    pub fn build(node_type: Vec<usize>, edges: &[EdgeRecord], num_node_types: usize, num_edge_types: usize) -> Self {
        let n = node_type.len();
        let mut nodes_by_type = vec![Vec::new(); num_node_types];
        for (i, &t) in node_type.iter().enumerate() {
            nodes_by_type[t].push(i);
        }
        let mut edges_by_type = vec![Vec::new(); num_edge_types];
        let mut src_by_edge_type = vec![Vec::new(); num_edge_types];
        let mut in_edges = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            edges_by_type[e.edge_type].push(k);
            src_by_edge_type[e.edge_type].push(e.src);
            in_edges[e.dst].push(k);
            out_edges[e.src].push(k);
        }
        Self {
            num_nodes: n,
            num_node_types,
            num_edge_types,
            node_type,
            edge_src: edges.iter().map(|e| e.src).collect(),
            edge_dst: edges.iter().map(|e| e.dst).collect(),
            edge_type: edges.iter().map(|e| e.edge_type).collect(),
            nodes_by_type: nodes_by_type.into_iter().map(Into::into).collect(),
            edges_by_type: edges_by_type.into_iter().map(Into::into).collect(),
            src_by_edge_type: src_by_edge_type.into_iter().map(Into::into).collect(),
            in_edges,
            out_edges,
            gcn: OnceLock::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    pub fn num_node_types(&self) -> usize {
        self.num_node_types
    }

    pub fn num_edge_types(&self) -> usize {
        self.num_edge_types
    }

    pub fn node_type(&self, i: usize) -> usize {
        self.node_type[i]
    }

    pub fn edge_src(&self) -> &Arc<[usize]> {
        &self.edge_src
    }

    pub fn edge_dst(&self) -> &Arc<[usize]> {
        &self.edge_dst
    }

    pub fn edge_type(&self, e: usize) -> usize {
        self.edge_type[e]
    }

    pub fn nodes_of_type(&self, t: usize) -> &Arc<[usize]> {
        &self.nodes_by_type[t]
    }

    /// Edge positions of type `r`, in edge-list order.
    pub fn edges_of_type(&self, r: usize) -> &Arc<[usize]> {
        &self.edges_by_type[r]
    }

    /// Source node of each edge in [`Self::edges_of_type`].
    pub fn sources_of_edge_type(&self, r: usize) -> &Arc<[usize]> {
        &self.src_by_edge_type[r]
    }

    pub fn in_edges(&self, i: usize) -> &[usize] {
        &self.in_edges[i]
    }

    pub fn out_edges(&self, i: usize) -> &[usize] {
        &self.out_edges[i]
    }

    /// Nodes from which `target` can be reached in at most `hops` directed
    /// steps, `target` included, sorted ascending.
    pub fn in_neighborhood(&self, target: usize, hops: usize) -> Vec<usize> {
        let mut seen = BTreeSet::from([target]);
        let mut frontier = vec![target];
        for _ in 0..hops {
            let mut next = Vec::new();
            for &v in &frontier {
                for &e in &self.in_edges[v] {
                    let s = self.edge_src[e];
                    if seen.insert(s) {
                        next.push(s);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        seen.into_iter().collect()
    }

    /// `D^{-1/2}(A+I)D^{-1/2}` over the undirected simple graph underlying the
    /// edge list, with its transpose.
    pub fn gcn_operator(&self) -> (Arc<SparseMatrix>, Arc<SparseMatrix>) {
        self.gcn
            .get_or_init(|| {
                let n = self.num_nodes;
                let mut pairs = BTreeSet::new();
                for i in 0..n {
                    pairs.insert((i, i));
                }
                for (&s, &t) in self.edge_src.iter().zip(self.edge_dst.iter()) {
                    pairs.insert((s, t));
                    pairs.insert((t, s));
                }
                let mut degree = vec![0.0f64; n];
                for &(r, _) in &pairs {
                    degree[r] += 1.0;
                }
                let triplets: Vec<_> = pairs
                    .iter()
                    .map(|&(r, c)| (r, c, 1.0 / (degree[r] * degree[c]).sqrt()))
                    .collect();
                let m = SparseMatrix::from_triplets(n, n, &triplets);
                let t = m.transpose();
                (Arc::new(m), Arc::new(t))
            })
            .clone()
    }
}
