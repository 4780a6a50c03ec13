use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, MetricsReport, TrainConfig, TrainError};
use crate::graph::{HeteroGraph, SplitMasks};
use crate::model::ModelParams;
use crate::tensor::Tensor;

/// Which node types survive an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    All,
    BusBike,
    BusTube,
    BusOnly,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::All, Scenario::BusBike, Scenario::BusTube, Scenario::BusOnly];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::All => "all",
            Scenario::BusBike => "bus+bike",
            Scenario::BusTube => "bus+tube",
            Scenario::BusOnly => "bus-only",
        }
    }

    /// Kept node type names; `None` keeps everything.
    pub fn node_types(self) -> Option<&'static [&'static str]> {
        match self {
            Scenario::All => None,
            Scenario::BusBike => Some(&["bus", "bike"]),
            Scenario::BusTube => Some(&["bus", "tube"]),
            Scenario::BusOnly => Some(&["bus"]),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s || format!("{sc:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| TrainError::Ablation(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    /// Original indices of the nodes that were kept.
    pub kept: Vec<usize>,
    pub params: ModelParams,
    pub test: MetricsReport,
}

/// Restricts the graph to the scenario's node types, keeps each split's
/// surviving nodes, and runs a full train/evaluate cycle.
pub fn ablate(
    graph: &HeteroGraph,
    targets: &Tensor,
    masks: &SplitMasks,
    scenario: Scenario,
    config: &TrainConfig,
) -> Result<ScenarioResult, TrainError> {
    let (sub, kept, sub_targets, sub_masks) = match scenario.node_types() {
        None => (graph.clone(), (0..graph.num_nodes()).collect(), targets.clone(), masks.clone()),
        Some(names) => {
            let types: Vec<usize> = names.iter().filter_map(|n| graph.schema().node_type_index(n)).collect();
            let (sub, kept) = graph.retain_node_types(&types)?;
            if kept.is_empty() {
                return Err(TrainError::Ablation(format!("scenario {scenario} keeps no labelled nodes")));
            }
            let mut remap = vec![usize::MAX; graph.num_nodes()];
            for (new, &old) in kept.iter().enumerate() {
                remap[old] = new;
            }
            let restrict = |s: &[usize]| -> Vec<usize> {
                s.iter().map(|&i| remap[i]).filter(|&i| i != usize::MAX).collect()
            };
            let sub_masks = SplitMasks {
                train: restrict(&masks.train),
                validation: restrict(&masks.validation),
                test: restrict(&masks.test),
                seed: masks.seed,
            };
            let sub_targets = targets.gather_rows(&kept)?;
            (sub, kept, sub_targets, sub_masks)
        }
    };
    let outcome = train(&sub, &sub_targets, &sub_masks, config)?;
    let pred = outcome.params.predict(&sub)?.values;
    let test = evaluate(&pred, &sub_targets, &sub_masks.test, "test")?;
    Ok(ScenarioResult {
        scenario,
        kept,
        params: outcome.params,
        test,
    })
}
