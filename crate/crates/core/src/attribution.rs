//! Input attributions for a single prediction: Gradient·Input and
//! Integrated Gradients from a zero-feature baseline, plus per-indicator
//! heatmaps over time bins.
//!
//! For the transformer and the dense network only the target's receptive
//! field can influence its output, so gradients are taken on the induced
//! subgraph of the in-neighbourhood and scattered back. The GCN operator
//! normalises by degrees of nodes outside that field, so it always runs on
//! the whole graph.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, HeteroGraph, INDICATORS};
use crate::model::{ModelError, ModelKind, ModelParams};
use crate::parallel;
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("target ({node}, {output}) out of range for {nodes} nodes and {outputs} outputs")]
    Target {
        node: usize,
        output: usize,
        nodes: usize,
        outputs: usize,
    },
    #[error("baseline does not share the input graph's structure")]
    Structure,
    #[error("step count must be at least 1")]
    Steps,
    #[error("no target nodes to attribute")]
    EmptyMask,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GradInput,
    IntegratedGradients,
}

/// Attribution of output `output` at node `node` to every input feature.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionScores {
    /// nodes x features.
    pub scores: Tensor,
    pub node: usize,
    pub output: usize,
    pub method: Method,
    pub steps: Option<usize>,
}

impl AttributionScores {
    pub fn total(&self) -> f64 {
        self.scores.sum()
    }
}

/// Column sums of an attribution matrix.
pub fn aggregate(s: &AttributionScores) -> Vec<f64> {
    s.scores.column_sums().to_vec()
}

/// The receptive field of `node`: graph to differentiate on, the kept
/// original indices, and the target's position inside it.
struct Local {
    graph: HeteroGraph,
    kept: Option<Vec<usize>>,
    target: usize,
}

fn local_view(model: &ModelParams, graph: &HeteroGraph, node: usize) -> Result<Local, AttributionError> {
    if model.kind == ModelKind::Gcn {
        return Ok(Local {
            graph: graph.clone(),
            kept: None,
            target: node,
        });
    }
    let kept = graph.topology().in_neighborhood(node, model.receptive_hops());
    let target = kept.binary_search(&node).expect("target is in its own neighbourhood");
    Ok(Local {
        graph: graph.induced(&kept)?,
        kept: Some(kept),
        target,
    })
}

impl Local {
    fn restrict(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        match &self.kept {
            Some(k) => x.gather_rows(k),
            None => Ok(x.clone()),
        }
    }

    fn expand(&self, local: Tensor, rows: usize) -> Tensor {
        match &self.kept {
            None => local,
            Some(kept) => {
                let cols = local.cols();
                let mut data = vec![0.0; rows * cols];
                for (r, &orig) in kept.iter().enumerate() {
                    data[orig * cols..(orig + 1) * cols].copy_from_slice(local.row(r));
                }
                Tensor::new(rows, cols, data).expect("shape by construction")
            }
        }
    }
}

fn check_target(model: &ModelParams, graph: &HeteroGraph, node: usize, output: usize) -> Result<(), AttributionError> {
    if node >= graph.num_nodes() || output >= model.hyper.outputs {
        return Err(AttributionError::Target {
            node,
            output,
            nodes: graph.num_nodes(),
            outputs: model.hyper.outputs,
        });
    }
    Ok(())
}

/// Output value and its gradient with respect to the local inputs.
fn output_gradient(
    model: &ModelParams,
    local: &Local,
    x: &Tensor,
    output: usize,
) -> Result<(f64, Tensor), AttributionError> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, false);
    let xv = tape.leaf(x.clone(), true);
    let y = model.forward_on(&mut tape, &local.graph, xv, &params)?;
    let picked = tape.pick(y, local.target, output)?;
    let value = tape.value(picked).item();
    let mut grads = tape.backward(picked)?;
    let g = grads.take(xv).expect("input requires grad");
    Ok((value, g))
}

/// `S = x ⊙ ∂y[node, output]/∂x`.
pub fn grad_input(
    model: &ModelParams,
    graph: &HeteroGraph,
    node: usize,
    output: usize,
) -> Result<AttributionScores, AttributionError> {
    check_target(model, graph, node, output)?;
    let local = local_view(model, graph, node)?;
    let x = local.restrict(graph.features())?;
    let (_, g) = output_gradient(model, &local, &x, output)?;
    let s = x.mul(&g)?;
    Ok(AttributionScores {
        scores: local.expand(s, graph.num_nodes()),
        node,
        output,
        method: Method::GradInput,
        steps: None,
    })
}

/// The same graph with every feature set to zero.
pub fn zero_baseline(graph: &HeteroGraph) -> HeteroGraph {
    let (r, c) = graph.features().shape();
    graph.with_features(Tensor::zeros(r, c)).expect("same shape")
}

/// Right Riemann sum of the path gradient from `baseline` to `graph`,
/// sampled at `q/steps` for `q = 1..=steps`, times the input difference.
pub fn integrated_gradients(
    model: &ModelParams,
    graph: &HeteroGraph,
    node: usize,
    output: usize,
    baseline: &HeteroGraph,
    steps: usize,
) -> Result<AttributionScores, AttributionError> {
    check_target(model, graph, node, output)?;
    if steps == 0 {
        return Err(AttributionError::Steps);
    }
    if !graph.same_structure(baseline) {
        return Err(AttributionError::Structure);
    }
    let local = local_view(model, graph, node)?;
    let x = local.restrict(graph.features())?;
    let base = local.restrict(baseline.features())?;
    let diff = x.sub(&base)?;
    let mut total = Tensor::zeros(x.rows(), x.cols());
    for q in 1..=steps {
        let alpha = q as f64 / steps as f64;
        let point = base.add(&diff.scale(alpha))?;
        let (_, g) = output_gradient(model, &local, &point, output)?;
        total = total.add(&g)?;
    }
    let s = diff.mul(&total.scale(1.0 / steps as f64))?;
    Ok(AttributionScores {
        scores: local.expand(s, graph.num_nodes()),
        node,
        output,
        method: Method::IntegratedGradients,
        steps: Some(steps),
    })
}

/// Indicators x features matrix of mean aggregated IG attributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub indicators: Vec<String>,
    pub feature_labels: Vec<String>,
    /// indicators x features.
    pub values: Tensor,
    /// Number of target nodes averaged in each row.
    pub counts: Vec<usize>,
}

/// Row `j` averages the aggregated IG attribution of output `j` over the
/// nodes in `nodes` whose dominant target is indicator `j`. Rows without
/// such nodes are zero.
pub fn heatmap_matrix(
    model: &ModelParams,
    graph: &HeteroGraph,
    targets: &Tensor,
    nodes: &[usize],
    steps: usize,
) -> Result<Heatmap, AttributionError> {
    if nodes.is_empty() {
        return Err(AttributionError::EmptyMask);
    }
    let outputs = model.hyper.outputs;
    let f = graph.schema().feature_count;
    let baseline = Arc::new(zero_baseline(graph));
    let jobs: Vec<(usize, usize)> = nodes
        .iter()
        .map(|&i| (i, crate::graph::argmax(targets.row(i))))
        .collect();
    let rows = parallel::map_slice(&jobs, |&(i, j)| {
        integrated_gradients(model, graph, i, j, &baseline, steps).map(|s| aggregate(&s))
    });
    let mut sums = vec![0.0; outputs * f];
    let mut counts = vec![0usize; outputs];
    for (&(_, j), row) in jobs.iter().zip(rows) {
        let row = row?;
        counts[j] += 1;
        for (acc, v) in sums[j * f..(j + 1) * f].iter_mut().zip(row) {
            *acc += v;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            log::warn!("heatmap: no target node is dominated by output {j}; row left at zero");
        } else {
            sums[j * f..(j + 1) * f].iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    Ok(Heatmap {
        indicators: (0..outputs)
            .map(|j| INDICATORS.get(j).map_or_else(|| format!("output{j}"), |s| s.to_string()))
            .collect(),
        feature_labels: (0..f).map(|k| graph.schema().feature_label(k)).collect(),
        values: Tensor::new(outputs, f, sums)?,
        counts,
    })
}

impl Heatmap {
    /// `indicator,06:00,06:15,...` with one row per indicator.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), AttributionError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["indicator".to_string()];
        header.extend(self.feature_labels.iter().cloned());
        out.write_record(&header)?;
        for (j, name) in self.indicators.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(self.values.row(j).iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}
