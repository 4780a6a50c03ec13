//! One-hop neighbour sampling for mini-batch training.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{EdgeRecord, GraphError, HeteroGraph};

/// Keeps, for every node, at most `budget` incoming edges of each edge type,
/// drawn uniformly without replacement. Surviving edges keep their relative
/// order. Nodes and features are unchanged.
pub fn sample_neighbors(graph: &HeteroGraph, budget: usize, seed: u64) -> Result<HeteroGraph, GraphError> {
    let topo = graph.topology();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; graph.num_edges()];
    let mut by_type: Vec<Vec<usize>> = vec![Vec::new(); topo.num_edge_types()];
    for t in 0..graph.num_nodes() {
        by_type.iter_mut().for_each(Vec::clear);
        for &e in topo.in_edges(t) {
            by_type[topo.edge_type(e)].push(e);
        }
        for edges in &by_type {
            if edges.len() <= budget {
                edges.iter().for_each(|&e| keep[e] = true);
            } else {
                for k in index::sample(&mut rng, edges.len(), budget) {
                    keep[edges[k]] = true;
                }
            }
        }
    }
    let edges: Vec<EdgeRecord> = graph
        .edges()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(e, _)| *e)
        .collect();
    graph.with_edges(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeRecord, Schema};

    fn star(leaves: usize) -> HeteroGraph {
        let schema = Schema { feature_count: 1, ..Schema::default() };
        let nodes = (0..=leaves)
            .map(|i| NodeRecord { id: format!("n{i}"), node_type: 1, lon: 0.0, lat: 0.0, features: vec![1.0] })
            .collect();
        let edges = (1..=leaves)
            .map(|i| EdgeRecord { src: i, dst: 0, edge_type: i % 2 })
            .collect();
        HeteroGraph::new(schema, nodes, edges).unwrap()
    }

    #[test]
    fn budget_is_per_edge_type() {
        let g = star(10);
        let s = sample_neighbors(&g, 2, 1).unwrap();
        assert_eq!(s.num_edges(), 4);
        assert_eq!(s.num_nodes(), g.num_nodes());
        assert_eq!(sample_neighbors(&g, 2, 1).unwrap(), s);
        assert_eq!(sample_neighbors(&g, 99, 1).unwrap(), g);
    }
}
