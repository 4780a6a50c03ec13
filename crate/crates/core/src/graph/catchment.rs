//! Land-use labels from points of interest inside a circular catchment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GraphError, HeteroGraph, INDICATORS};
use crate::parallel;
use crate::tensor::Tensor;

/// Mean Earth radius (IUGG), metres.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub lon: f64,
    pub lat: f64,
    pub category: String,
}

/// Great-circle distance in metres between two (lon, lat) points in degrees.
pub fn haversine_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (lon2 - lon1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Per-node land-use intensities, min-max normalised per indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct LandUseTargets {
    pub indicators: Vec<String>,
    /// Normalised values, nodes x indicators, each in [0, 1].
    pub values: Tensor,
    /// Raw POI counts before normalisation.
    pub counts: Tensor,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// POIs dropped because their category is not an indicator.
    pub skipped: usize,
}

impl LandUseTargets {
    /// Builds normalised targets from raw per-node counts. Constant
    /// indicators normalise to 0.
    pub fn from_counts(counts: Tensor, skipped: usize) -> Self {
        let t = counts.cols();
        let mut min = vec![f64::INFINITY; t];
        let mut max = vec![f64::NEG_INFINITY; t];
        for r in 0..counts.rows() {
            for (j, &v) in counts.row(r).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        let mut data = counts.to_vec();
        if t > 0 {
            for row in data.chunks_mut(t) {
                for (j, v) in row.iter_mut().enumerate() {
                    let span = max[j] - min[j];
                    *v = if span > 0.0 { (*v - min[j]) / span } else { 0.0 };
                }
            }
        }
        Self {
            indicators: INDICATORS.iter().map(|s| s.to_string()).collect(),
            values: Tensor::from_parts(counts.rows(), t, data),
            counts,
            min,
            max,
            skipped,
        }
    }

    /// Restricts to the given node indices (in order).
    pub fn select(&self, nodes: &[usize]) -> Self {
        Self {
            indicators: self.indicators.clone(),
            values: self.values.gather_rows(nodes).expect("node indices in range"),
            counts: self.counts.gather_rows(nodes).expect("node indices in range"),
            min: self.min.clone(),
            max: self.max.clone(),
            skipped: self.skipped,
        }
    }

    /// Index of the largest normalised indicator for node `i` (first wins ties).
    pub fn dominant(&self, i: usize) -> usize {
        argmax(self.values.row(i))
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Counts POIs of each indicator within `radius_m` (inclusive) of each node.
pub fn label_points(graph: &HeteroGraph, pois: &[Poi], radius_m: f64) -> Result<LandUseTargets, GraphError> {
    if !(radius_m > 0.0 && radius_m.is_finite()) {
        return Err(GraphError::Config(format!("catchment radius must be positive, got {radius_m}")));
    }
    let mut kept: Vec<(f64, f64, usize)> = Vec::with_capacity(pois.len());
    let mut skipped = 0;
    for p in pois {
        match INDICATORS.iter().position(|c| *c == p.category) {
            Some(j) => kept.push((p.lat, p.lon, j)),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} POIs with unknown categories");
    }
    if kept.is_empty() {
        return Err(GraphError::Labeling("no POI with a known category".into()));
    }
    // Sorting by latitude lets each node scan only a latitude band. Counting
    // is order-independent, so the result does not depend on input order.
    kept.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    let band_deg = (radius_m / EARTH_RADIUS_M).to_degrees() * (1.0 + 1e-9);
    let t = INDICATORS.len();
    let rows = parallel::map_range(graph.num_nodes(), |i| {
        let node = graph.node(i);
        let lo = kept.partition_point(|p| p.0 < node.lat - band_deg);
        let mut counts = vec![0.0; t];
        for &(lat, lon, j) in kept[lo..].iter().take_while(|p| p.0 <= node.lat + band_deg) {
            if haversine_m(node.lon, node.lat, lon, lat) <= radius_m {
                counts[j] += 1.0;
            }
        }
        counts
    });
    let counts = Tensor::from_parts(graph.num_nodes(), t, rows.concat());
    Ok(LandUseTargets::from_counts(counts, skipped))
}

/// Reads a POI CSV and labels every node by catchment counting.
pub fn label_by_catchment(graph: &HeteroGraph, poi_path: &Path, radius_m: f64) -> Result<LandUseTargets, GraphError> {
    let file = std::fs::File::open(poi_path).map_err(|source| GraphError::Io {
        path: poi_path.to_path_buf(),
        source,
    })?;
    let pois = super::read_pois(file)?;
    label_points(graph, &pois, radius_m)
}
