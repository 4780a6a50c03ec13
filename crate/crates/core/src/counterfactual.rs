//! Counterfactual explanations by nearest 1-hop subgraph.
//!
//! Each node is summarised by its 1-hop complete subgraph (the node, its in-
//! and out-neighbours, and every edge among them). The counterfactual for a
//! node is the subgraph around a node of the desired kind that is least
//! dissimilar to its own.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{argmax, HeteroGraph, INDICATORS};
use crate::parallel;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum CounterfactualError {
    #[error("node index {index} out of range for {len} nodes")]
    Node { index: usize, len: usize },
    #[error("shannon diversity is undefined for a row without positive mass")]
    Diversity,
    #[error("mixed fraction must lie in (0, 1], got {0}")]
    Fraction(f64),
    #[error("desired set is empty")]
    EmptyDesired,
    #[error("node {0} is already in the desired set")]
    AlreadyDesired(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A node, its in- and out-neighbours, and the edges induced among them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubgraphView {
    pub center: usize,
    /// Sorted node indices, including the centre.
    pub members: Vec<usize>,
    /// Sorted indices into the parent graph's edge list.
    pub edges: Vec<usize>,
}

pub fn one_hop_subgraph(graph: &HeteroGraph, i: usize) -> Result<SubgraphView, CounterfactualError> {
    if i >= graph.num_nodes() {
        return Err(CounterfactualError::Node {
            index: i,
            len: graph.num_nodes(),
        });
    }
    let topo = graph.topology();
    let mut members: Vec<usize> = topo
        .in_edges(i)
        .iter()
        .map(|&e| topo.edge_src()[e])
        .chain(topo.out_edges(i).iter().map(|&e| topo.edge_dst()[e]))
        .chain(std::iter::once(i))
        .collect();
    members.sort_unstable();
    members.dedup();
    let mut edges: Vec<usize> = members
        .iter()
        .flat_map(|&m| topo.out_edges(m).iter().copied())
        .filter(|&e| members.binary_search(&topo.edge_dst()[e]).is_ok())
        .collect();
    edges.sort_unstable();
    Ok(SubgraphView {
        center: i,
        members,
        edges,
    })
}

/// Type counts and edge statistics of a subgraph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphSummary {
    pub node_id: String,
    /// Node count per node type name.
    pub type_counts: BTreeMap<String, usize>,
    /// Mean ordinal edge code; 0 for an edgeless subgraph.
    pub mean_edge_type: f64,
    pub edge_count: usize,
}

impl SubgraphView {
    pub fn type_counts(&self, graph: &HeteroGraph) -> Vec<usize> {
        let mut counts = vec![0; graph.schema().node_types.len()];
        self.members.iter().for_each(|&m| counts[graph.node(m).node_type] += 1);
        counts
    }

    pub fn mean_edge_code(&self, graph: &HeteroGraph) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        self.edges.iter().map(|&e| graph.edge_code(e) as f64).sum::<f64>() / self.edges.len() as f64
    }

    pub fn summary(&self, graph: &HeteroGraph) -> SubgraphSummary {
        SubgraphSummary {
            node_id: graph.node(self.center).id.clone(),
            type_counts: graph
                .schema()
                .node_types
                .iter()
                .cloned()
                .zip(self.type_counts(graph))
                .collect(),
            mean_edge_type: self.mean_edge_code(graph),
            edge_count: self.edges.len(),
        }
    }
}

/// Shannon entropy of a prediction row after clamping negatives to zero.
pub fn shannon_diversity(row: &[f64]) -> Result<f64, CounterfactualError> {
    let total: f64 = row.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(CounterfactualError::Diversity);
    }
    Ok(row
        .iter()
        .map(|v| v.max(0.0) / total)
        .filter(|&p| p > 0.0)
        .fold(0.0, |acc, p| acc - p * p.ln()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedSet {
    /// Selected nodes, most diverse first.
    pub nodes: Vec<usize>,
    /// Diversity of every node; rows without positive mass score 0.
    pub diversity: Vec<f64>,
    pub fraction: f64,
}

impl MixedSet {
    pub fn contains(&self, i: usize) -> bool {
        self.nodes.contains(&i)
    }
}

/// Number of nodes in the top `fraction`, rounded up.
pub fn mixed_count(fraction: f64, n: usize) -> usize {
    // The epsilon keeps e.g. 0.1 * 30 = 3.0000000000000004 from rounding up to 4.
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// The `⌈fraction·N⌉` nodes with the highest diversity; ties go to the
/// lower node index.
pub fn mixed_set(predictions: &Tensor, fraction: f64) -> Result<MixedSet, CounterfactualError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CounterfactualError::Fraction(fraction));
    }
    let n = predictions.rows();
    let diversity: Vec<f64> = (0..n)
        .map(|i| shannon_diversity(predictions.row(i)).unwrap_or(0.0))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diversity[b].total_cmp(&diversity[a]).then(a.cmp(&b)));
    order.truncate(mixed_count(fraction, n));
    Ok(MixedSet {
        nodes: order,
        diversity,
        fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityBreakdown {
    pub node_feature: f64,
    pub node_type: f64,
    pub edge_type: f64,
    pub structure: f64,
    pub total: f64,
    /// Set when either subgraph had no edges and its mean edge type was taken as 0.
    pub empty_edges: bool,
}

pub const COMPONENTS: [&str; 4] = ["node_feature", "node_type", "edge_type", "structure"];

impl DissimilarityBreakdown {
    pub fn components(&self) -> [f64; 4] {
        [self.node_feature, self.node_type, self.edge_type, self.structure]
    }

    fn from_components(c: [f64; 4], empty_edges: bool) -> Self {
        Self {
            node_feature: c[0],
            node_type: c[1],
            edge_type: c[2],
            structure: c[3],
            total: c[0] + c[1] + c[2] + c[3],
            empty_edges,
        }
    }
}

fn l2(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// `1 − u·v / (|u||v|)`, defined as 1 when either vector is zero.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    (1.0 - dot / (nu * nv)).max(0.0)
}

/// `1 − Σ min / Σ max` over matching counts; 0 when both are empty.
pub fn multiset_jaccard_distance(a: &[usize], b: &[usize]) -> f64 {
    let (mut lo, mut hi) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        lo += x.min(y);
        hi += x.max(y);
    }
    if hi == 0 {
        0.0
    } else {
        1.0 - lo as f64 / hi as f64
    }
}

/// Four-part dissimilarity of `gj` from `gi`. The feature term compares the
/// centre of `gi` with every member of `gj`, so it is not symmetric.
pub fn dissimilarity(graph: &HeteroGraph, gi: &SubgraphView, gj: &SubgraphView) -> DissimilarityBreakdown {
    let x = graph.features();
    let xi = x.row(gi.center);
    let node_feature = gj
        .members
        .iter()
        .map(|&k| 0.5 * (l2(xi, x.row(k)) + cosine_distance(xi, x.row(k))))
        .sum::<f64>()
        / gj.members.len() as f64;
    let node_type = multiset_jaccard_distance(&gi.type_counts(graph), &gj.type_counts(graph));
    let empty_edges = gi.edges.is_empty() || gj.edges.is_empty();
    let edge_type = (gi.mean_edge_code(graph) - gj.mean_edge_code(graph)).abs();
    let structure = (gi.edges.len() as f64 - gj.edges.len() as f64).abs();
    DissimilarityBreakdown::from_components([node_feature, node_type, edge_type, structure], empty_edges)
}

/// Min-max scaling of each component across a population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentScaling {
    pub min: [f64; 4],
    pub max: [f64; 4],
}

impl ComponentScaling {
    pub fn fit(items: &[DissimilarityBreakdown]) -> Self {
        let mut min = [f64::INFINITY; 4];
        let mut max = [f64::NEG_INFINITY; 4];
        for d in items {
            for (k, v) in d.components().into_iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Self { min, max }
    }

    /// Scaled components; constant components map to 0.
    pub fn apply(&self, d: &DissimilarityBreakdown) -> DissimilarityBreakdown {
        let mut c = d.components();
        for (k, v) in c.iter_mut().enumerate() {
            let span = self.max[k] - self.min[k];
            *v = if span > 0.0 { (*v - self.min[k]) / span } else { 0.0 };
        }
        DissimilarityBreakdown::from_components(c, d.empty_edges)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterfactual {
    pub input: SubgraphView,
    pub ce: SubgraphView,
    pub breakdown: DissimilarityBreakdown,
    /// Components min-max scaled over every candidate of this search.
    pub scaled: DissimilarityBreakdown,
}

/// Exhaustive search over `desired` for the subgraph least dissimilar to
/// node `i`'s; ties go to the lower node index.
pub fn find_counterfactual(
    graph: &HeteroGraph,
    i: usize,
    desired: &[usize],
) -> Result<Counterfactual, CounterfactualError> {
    if desired.is_empty() {
        return Err(CounterfactualError::EmptyDesired);
    }
    if desired.contains(&i) {
        return Err(CounterfactualError::AlreadyDesired(i));
    }
    let input = one_hop_subgraph(graph, i)?;
    let views = desired
        .iter()
        .map(|&j| one_hop_subgraph(graph, j))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = parallel::map_slice(&views, |v| dissimilarity(graph, &input, v));
    let best = (0..views.len())
        .min_by(|&a, &b| {
            scores[a]
                .total
                .total_cmp(&scores[b].total)
                .then(views[a].center.cmp(&views[b].center))
        })
        .expect("non-empty");
    let scaling = ComponentScaling::fit(&scores);
    Ok(Counterfactual {
        scaled: scaling.apply(&scores[best]),
        breakdown: scores[best],
        ce: views[best].clone(),
        input,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualReport {
    pub input_node: String,
    pub ce_node: String,
    pub input_subgraph: SubgraphSummary,
    pub ce_subgraph: SubgraphSummary,
    pub raw: DissimilarityBreakdown,
    pub scaled: DissimilarityBreakdown,
    pub total: f64,
}

impl Counterfactual {
    pub fn report(&self, graph: &HeteroGraph) -> CounterfactualReport {
        CounterfactualReport {
            input_node: graph.node(self.input.center).id.clone(),
            ce_node: graph.node(self.ce.center).id.clone(),
            input_subgraph: self.input.summary(graph),
            ce_subgraph: self.ce.summary(graph),
            raw: self.breakdown,
            scaled: self.scaled,
            total: self.breakdown.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfRow {
    pub indicator: String,
    pub component: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfTable {
    pub rows: Vec<CfRow>,
    /// Indicators with no evaluated node.
    pub omitted: Vec<String>,
    /// Raw breakdown of every evaluated node: (node, dominant indicator, breakdown).
    pub evaluated: Vec<(usize, usize, DissimilarityBreakdown)>,
    pub scaling: ComponentScaling,
}

/// Counterfactual scores of every node outside the mixed set, grouped by
/// dominant target indicator. Components are min-max scaled across all
/// evaluated nodes before averaging.
pub fn aggregate_cf_scores(
    graph: &HeteroGraph,
    targets: &Tensor,
    mixed: &MixedSet,
) -> Result<CfTable, CounterfactualError> {
    if mixed.nodes.is_empty() {
        return Err(CounterfactualError::EmptyDesired);
    }
    let views = (0..graph.num_nodes())
        .map(|i| one_hop_subgraph(graph, i))
        .collect::<Result<Vec<_>, _>>()?;
    let candidates: Vec<&SubgraphView> = mixed.nodes.iter().map(|&j| &views[j]).collect();
    let queries: Vec<usize> = (0..graph.num_nodes()).filter(|i| !mixed.contains(*i)).collect();
    let evaluated: Vec<(usize, usize, DissimilarityBreakdown)> = parallel::map_slice(&queries, |&i| {
        let best = candidates
            .iter()
            .map(|v| (dissimilarity(graph, &views[i], v), v.center))
            .min_by(|a, b| a.0.total.total_cmp(&b.0.total).then(a.1.cmp(&b.1)))
            .expect("non-empty");
        (i, argmax(targets.row(i)), best.0)
    });
    let breakdowns: Vec<DissimilarityBreakdown> = evaluated.iter().map(|e| e.2).collect();
    let scaling = ComponentScaling::fit(&breakdowns);
    let mut rows = Vec::new();
    let mut omitted = Vec::new();
    for j in 0..targets.cols() {
        let name = INDICATORS.get(j).map_or_else(|| format!("output{j}"), |s| s.to_string());
        let group: Vec<[f64; 4]> = evaluated
            .iter()
            .filter(|e| e.1 == j)
            .map(|e| scaling.apply(&e.2).components())
            .collect();
        if group.is_empty() {
            log::warn!("counterfactual table: no evaluated node is dominated by {name}; row omitted");
            omitted.push(name);
            continue;
        }
        let n = group.len() as f64;
        for (k, component) in COMPONENTS.iter().enumerate() {
            let mean = group.iter().map(|c| c[k]).sum::<f64>() / n;
            let var = group.iter().map(|c| (c[k] - mean).powi(2)).sum::<f64>() / n;
            rows.push(CfRow {
                indicator: name.clone(),
                component: component.to_string(),
                mean,
                std: var.sqrt(),
                count: group.len(),
            });
        }
    }
    Ok(CfTable {
        rows,
        omitted,
        evaluated,
        scaling,
    })
}

impl CfTable {
    /// `indicator,component,mean,std`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CounterfactualError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["indicator", "component", "mean", "std"])?;
        for r in &self.rows {
            out.write_record([r.indicator.clone(), r.component.clone(), r.mean.to_string(), r.std.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diversity_cases() {
        assert!((shannon_diversity(&[1.0; 6]).unwrap() - 6f64.ln()).abs() < 1e-12);
        assert_eq!(shannon_diversity(&[0.0, 3.0, 0.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((shannon_diversity(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(shannon_diversity(&[0.0, -1.0]).is_err());
    }

    #[test]
    fn jaccard_reference_values() {
        let d = multiset_jaccard_distance(&[0, 14, 4], &[0, 13, 4]);
        assert!((d - 1.0 / 18.0).abs() < 1e-15);
        assert_eq!(multiset_jaccard_distance(&[0, 11, 0], &[0, 11, 0]), 0.0);
    }

    #[test]
    fn mixed_count_rounds_up() {
        assert_eq!(mixed_count(0.1, 10), 1);
        assert_eq!(mixed_count(0.1, 30), 3);
        assert_eq!(mixed_count(0.1, 31), 4);
        assert_eq!(mixed_count(1.0, 7), 7);
    }
}
