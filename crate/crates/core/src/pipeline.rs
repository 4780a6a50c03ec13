//! Glue shared by the command line and the end-to-end tests: seed
//! derivation and dataset preparation.

use crate::graph::{label_points, GraphError, HeteroGraph, LandUseTargets, NormalizeMode, Poi, SplitMasks, SplitRatios};
use crate::graph::{split, FeatureScaling};

/// Deterministic sub-seed for one use of a root seed (SplitMix64 finaliser
/// over the root mixed with an FNV-1a hash of the label).
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A labelled, normalised and split graph ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Graph with scaled features.
    pub graph: HeteroGraph,
    pub scaling: FeatureScaling,
    pub targets: LandUseTargets,
    pub masks: SplitMasks,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepareOptions {
    pub radius_m: f64,
    pub ratios: SplitRatios,
    pub split_seed: u64,
    pub normalize: NormalizeMode,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            radius_m: 1000.0,
            ratios: SplitRatios::default(),
            split_seed: 0,
            normalize: NormalizeMode::MinMax,
        }
    }
}

/// Labels by catchment on raw coordinates, scales features, splits nodes.
pub fn prepare(raw: &HeteroGraph, pois: &[Poi], opts: &PrepareOptions) -> Result<Dataset, GraphError> {
    let targets = label_points(raw, pois, opts.radius_m)?;
    let (graph, scaling) = raw.normalize_features(opts.normalize);
    let masks = split(raw.num_nodes(), opts.ratios, opts.split_seed)?;
    Ok(Dataset {
        graph,
        scaling,
        targets,
        masks,
    })
}
