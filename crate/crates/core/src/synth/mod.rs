//! Seeded synthetic city with known latent structure.
//!
//! Places are Gaussian clusters, each with a mixture over three archetypes.
//! The archetype mixture at a point sets both the shape of station ridership
//! and the local POI mix, so land use is recoverable from ridership, but only
//! noisily at any single bus stop. Tube stations are sparse and clean, bike
//! docks are shifted in time and count arrivals rather than departures (the
//! morning and evening peaks swap), and tube stations attract extra transport
//! POIs, so neighbours of other types carry real signal.

mod archetype;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    write_edges, write_nodes, write_pois, EdgeRecord, GraphError, HeteroGraph, NodeRecord, Poi, Schema, EARTH_RADIUS_M,
    INDICATORS,
};

pub use archetype::{window_mass, Archetype};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid city spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

/// How stations of one type are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeProfile {
    pub node_type: String,
    pub count: usize,
    /// Riders per bin at a template value of 1 and unit local density.
    pub riders: f64,
    /// Relative standard deviation of the per-bin multiplicative noise.
    pub noise: f64,
    /// Log-scale standard deviation of a per-station volume factor.
    pub popularity_sd: f64,
    /// Template shift in bins; negative is earlier.
    pub shift_bins: i64,
    /// Counts arrivals rather than boardings, which swaps the work and
    /// residential curves (docks near offices fill in the morning).
    #[serde(default)]
    pub arrivals: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    /// Weights over work-like, residential-like, leisure-like.
    pub mixture: [f64; 3],
    pub sigma_m: f64,
    /// Peak density multiplier.
    pub intensity: f64,
    /// Relative share of stations.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CitySpec {
    pub seed: u64,
    pub center_lon: f64,
    pub center_lat: f64,
    /// Full width and height of the area, degrees.
    pub extent_lon: f64,
    pub extent_lat: f64,
    pub min_separation_m: f64,
    pub clusters: Vec<ClusterSpec>,
    pub node_types: Vec<TypeProfile>,
    /// Road links per station to its nearest neighbours.
    pub knn: usize,
    /// Log-scale jitter of each station's archetype mixture.
    pub mixture_jitter: f64,
    /// Expected extra transport POIs around each tube station.
    pub tube_transport_pois: f64,
    pub tube_transport_sigma_m: f64,
    /// Road class probabilities (primary .. unclassified) by archetype.
    pub road_classes: [[f64; 5]; 3],
    pub feature_bins: usize,
}

impl Default for CitySpec {
    fn default() -> Self {
        let mixtures = [
            [0.80, 0.10, 0.10],
            [0.10, 0.80, 0.10],
            [0.10, 0.10, 0.80],
            [0.60, 0.10, 0.30],
            [0.20, 0.70, 0.10],
            [0.30, 0.20, 0.50],
            [0.70, 0.25, 0.05],
            [0.05, 0.90, 0.05],
            [0.15, 0.35, 0.50],
            [0.50, 0.40, 0.10],
            [0.10, 0.60, 0.30],
            [0.40, 0.10, 0.50],
        ];
        let clusters = mixtures
            .iter()
            .enumerate()
            .map(|(c, &mixture)| ClusterSpec {
                mixture,
                sigma_m: 700.0 + 60.0 * ((c * 7) % 11) as f64,
                intensity: 0.7 + 0.06 * ((c * 5) % 11) as f64,
                weight: 1.0,
            })
            .collect();
        let profile = |node_type: &str, count, riders, noise, popularity_sd, shift_bins, arrivals| TypeProfile {
            node_type: node_type.into(),
            count,
            riders,
            noise,
            popularity_sd,
            shift_bins,
            arrivals,
        };
        Self {
            seed: 42,
            center_lon: -0.1,
            center_lat: 51.5,
            extent_lon: 0.24,
            extent_lat: 0.15,
            min_separation_m: 3000.0,
            clusters,
            node_types: vec![
                profile("tube", 20, 300.0, 0.05, 0.1, 0, false),
                profile("bus", 300, 50.0, 0.3, 0.5, 0, false),
                profile("bike", 80, 120.0, 0.15, 0.2, -2, true),
            ],
            knn: 4,
            mixture_jitter: 0.3,
            tube_transport_pois: 40.0,
            tube_transport_sigma_m: 300.0,
            road_classes: [
                [0.35, 0.30, 0.20, 0.05, 0.10],
                [0.05, 0.10, 0.20, 0.50, 0.15],
                [0.15, 0.25, 0.30, 0.20, 0.10],
            ],
            feature_bins: 64,
        }
    }
}

impl CitySpec {
    pub fn validate(&self, schema: &Schema) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if !(self.extent_lon > 0.0 && self.extent_lat > 0.0) {
            return bad("extent must be positive".into());
        }
        if self.clusters.is_empty() {
            return bad("at least one cluster is required".into());
        }
        for (c, cl) in self.clusters.iter().enumerate() {
            if cl.mixture.iter().any(|w| !(*w >= 0.0)) || cl.mixture.iter().sum::<f64>() <= 0.0 {
                return bad(format!("cluster {c}: mixture must be non-negative with a positive sum"));
            }
            if !(cl.sigma_m > 0.0 && cl.intensity > 0.0 && cl.weight > 0.0) {
                return bad(format!("cluster {c}: sigma_m, intensity and weight must be positive"));
            }
        }
        if self.node_types.is_empty() {
            return bad("no node types requested".into());
        }
        for p in &self.node_types {
            if schema.node_type_index(&p.node_type).is_none() {
                return bad(format!("unknown node type `{}`", p.node_type));
            }
            if p.count == 0 {
                return bad(format!("{}: count must be at least 1", p.node_type));
            }
            if !(p.riders > 0.0 && p.noise >= 0.0 && p.popularity_sd >= 0.0) {
                return bad(format!("{}: riders must be positive and noise non-negative", p.node_type));
            }
        }
        if self.road_classes.iter().any(|r| r.iter().any(|p| !(*p >= 0.0)) || r.iter().sum::<f64>() <= 0.0) {
            return bad("road class weights must be non-negative with a positive sum".into());
        }
        if self.knn == 0 || self.feature_bins == 0 {
            return bad("knn and feature_bins must be positive".into());
        }
        if self.tube_transport_pois < 0.0 || self.tube_transport_sigma_m <= 0.0 || self.mixture_jitter < 0.0 {
            return bad("tube transport and jitter settings must be non-negative".into());
        }
        Ok(())
    }

    fn metres_per_degree_lat() -> f64 {
        EARTH_RADIUS_M * std::f64::consts::PI / 180.0
    }

    fn metres_per_degree_lon(&self) -> f64 {
        Self::metres_per_degree_lat() * self.center_lat.to_radians().cos()
    }

    /// Local planar coordinates in metres relative to the centre.
    pub fn to_local(&self, lon: f64, lat: f64) -> (f64, f64) {
        (
            (lon - self.center_lon) * self.metres_per_degree_lon(),
            (lat - self.center_lat) * Self::metres_per_degree_lat(),
        )
    }

    pub fn to_lon_lat(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.center_lon + x / self.metres_per_degree_lon(),
            self.center_lat + y / Self::metres_per_degree_lat(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub index: usize,
    pub lon: f64,
    pub lat: f64,
    pub sigma_m: f64,
    pub intensity: f64,
    pub mixture: [f64; 3],
    pub dominant: Archetype,
    pub road_classes: [f64; 5],
    /// POIs per km² at the centre, by indicator.
    pub poi_density: [f64; 6],
    /// Expected POI count of the whole cluster, by indicator.
    pub poi_expected: [f64; 6],
    pub poi_sampled: [usize; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: String,
    pub node_type: String,
    pub cluster: usize,
    /// Archetype mixture of the local density field.
    pub mixture: [f64; 3],
    /// Mixture after station-level jitter, which drives the features.
    pub station_mixture: [f64; 3],
    /// Sum of cluster densities at the station (1 at a unit-intensity centre).
    pub local_density: f64,
    pub popularity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: CitySpec,
    pub archetypes: Vec<(Archetype, Vec<f64>)>,
    pub clusters: Vec<ClusterInfo>,
    pub nodes: Vec<NodeInfo>,
    pub tube_transport_sampled: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCity {
    pub schema: Schema,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
    pub pois: Vec<Poi>,
    pub manifest: Manifest,
}

/// Paths of the files written by [`SyntheticCity::write_to`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CityFiles {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub pois: PathBuf,
    pub manifest: PathBuf,
}

impl CityFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            nodes: dir.join("nodes.csv"),
            edges: dir.join("edges.csv"),
            pois: dir.join("poi.csv"),
            manifest: dir.join("manifest.json"),
        }
    }
}

impl SyntheticCity {
    pub fn graph(&self) -> Result<HeteroGraph, SynthError> {
        Ok(HeteroGraph::new(self.schema.clone(), self.nodes.clone(), self.edges.clone())?)
    }

    pub fn write_to(&self, dir: &Path) -> Result<CityFiles, SynthError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let files = CityFiles::in_dir(dir);
        let create = |p: &Path| File::create(p).map(BufWriter::new).map_err(io(p));
        let graph = self.graph()?;
        write_nodes(&graph, create(&files.nodes)?)?;
        write_edges(&graph, create(&files.edges)?)?;
        write_pois(&self.pois, create(&files.pois)?)?;
        serde_json::to_writer_pretty(create(&files.manifest)?, &self.manifest)?;
        Ok(files)
    }
}

fn normalise(w: [f64; 3]) -> [f64; 3] {
    let s: f64 = w.iter().sum();
    [w[0] / s, w[1] / s, w[2] / s]
}

fn dominant(w: &[f64; 3]) -> Archetype {
    Archetype::ALL[crate::graph::argmax(w)]
}

fn mix<const K: usize>(weights: &[f64; 3], rows: [[f64; K]; 3]) -> [f64; K] {
    let mut out = [0.0; K];
    for (w, row) in weights.iter().zip(rows) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += w * v;
        }
    }
    out
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

pub fn generate(spec: &CitySpec) -> Result<SyntheticCity, SynthError> {
    generate_with_schema(spec, Schema::default())
}

pub fn generate_with_schema(spec: &CitySpec, schema: Schema) -> Result<SyntheticCity, SynthError> {
    spec.validate(&schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let bins = spec.feature_bins;
    let half_w = spec.extent_lon * spec.metres_per_degree_lon() / 2.0;
    let half_h = spec.extent_lat * CitySpec::metres_per_degree_lat() / 2.0;

    // Cluster centres by rejection sampling, relaxing the separation if the
    // area is too crowded.
    let mut centres: Vec<(f64, f64)> = Vec::with_capacity(spec.clusters.len());
    let mut separation = spec.min_separation_m;
    while centres.len() < spec.clusters.len() {
        let mut placed = false;
        for _ in 0..2000 {
            let (x, y) = (rng.random_range(-0.8..0.8) * half_w, rng.random_range(-0.8..0.8) * half_h);
            if centres.iter().all(|&(cx, cy)| (cx - x).hypot(cy - y) >= separation) {
                centres.push((x, y));
                placed = true;
                break;
            }
        }
        if !placed {
            separation *= 0.9;
            log::warn!("relaxing cluster separation to {separation:.0} m");
        }
    }
    let mixtures: Vec<[f64; 3]> = spec.clusters.iter().map(|c| normalise(c.mixture)).collect();
    let densities: Vec<[f64; 6]> = mixtures
        .iter()
        .map(|w| mix(w, Archetype::ALL.map(Archetype::poi_density)))
        .collect();
    let field = |x: f64, y: f64| -> Vec<f64> {
        spec.clusters
            .iter()
            .zip(&centres)
            .map(|(c, &(cx, cy))| {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                c.intensity * (-d2 / (2.0 * c.sigma_m * c.sigma_m)).exp()
            })
            .collect()
    };

    // Stations.
    let templates: Vec<Vec<f64>> = Archetype::ALL.iter().map(|a| a.template(bins)).collect();
    let picker = WeightedIndex::new(spec.clusters.iter().map(|c| c.weight)).map_err(|e| SynthError::Spec(e.to_string()))?;
    let mut nodes = Vec::new();
    let mut infos = Vec::new();
    let mut local_xy = Vec::new();
    for profile in &spec.node_types {
        let node_type = schema.node_type_index(&profile.node_type).expect("validated");
        for n in 0..profile.count {
            let c = picker.sample(&mut rng);
            let (cx, cy) = centres[c];
            let sigma = spec.clusters[c].sigma_m;
            let x = cx + sigma * std.sample(&mut rng);
            let y = cy + sigma * std.sample(&mut rng);
            let dens = field(x, y);
            let total: f64 = dens.iter().sum();
            let mixture = if total > 1e-12 {
                let mut m = [0.0; 3];
                for (d, w) in dens.iter().zip(&mixtures) {
                    for a in 0..3 {
                        m[a] += d * w[a] / total;
                    }
                }
                m
            } else {
                mixtures[c]
            };
            let station_mixture = normalise(mixture.map(|m| m * (spec.mixture_jitter * std.sample(&mut rng)).exp()));
            let popularity = (profile.popularity_sd * std.sample(&mut rng)).exp();
            let amplitude = profile.riders * popularity * (0.25 + total);
            let features = (0..bins)
                .map(|k| {
                    let src = (k as i64 - profile.shift_bins).clamp(0, bins as i64 - 1) as usize;
                    let shape: f64 = (0..3)
                        .map(|a| {
                            let t = if profile.arrivals && a < 2 { 1 - a } else { a };
                            station_mixture[a] * templates[t][src]
                        })
                        .sum();
                    let noisy = amplitude * shape * (1.0 + profile.noise * std.sample(&mut rng));
                    noisy.max(0.0).round()
                })
                .collect();
            let (lon, lat) = spec.to_lon_lat(x, y);
            let id = format!("{}{n:04}", profile.node_type);
            infos.push(NodeInfo {
                id: id.clone(),
                node_type: profile.node_type.clone(),
                cluster: c,
                mixture,
                station_mixture,
                local_density: total,
                popularity,
            });
            nodes.push(NodeRecord {
                id,
                node_type,
                lon,
                lat,
                features,
            });
            local_xy.push((x, y));
        }
    }

    // Roads: each station links to its k nearest neighbours; links are
    // undirected and written in both directions.
    let n = nodes.len();
    let mut pairs = BTreeSet::new();
    for i in 0..n {
        let mut by_dist: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((local_xy[i].0 - local_xy[j].0).hypot(local_xy[i].1 - local_xy[j].1), j))
            .collect();
        by_dist.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        for &(_, j) in by_dist.iter().take(spec.knn) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    let road_names = ["primary", "secondary", "tertiary", "residential", "unclassified"];
    let road_types: Vec<usize> = road_names
        .iter()
        .map(|r| schema.edge_type_index(r).ok_or_else(|| SynthError::Spec(format!("schema lacks edge type `{r}`"))))
        .collect::<Result<_, _>>()?;
    let road_probs: Vec<[f64; 5]> = mixtures.iter().map(|w| mix(w, spec.road_classes)).collect();
    let mut edges = Vec::new();
    for &(a, b) in &pairs {
        let probs = road_probs[infos[a].cluster];
        let k = WeightedIndex::new(probs).expect("positive road weights").sample(&mut rng);
        let edge_type = road_types[k];
        edges.push(EdgeRecord { src: a, dst: b, edge_type });
        edges.push(EdgeRecord { src: b, dst: a, edge_type });
    }

    // Tube line: greedy nearest-neighbour chain from the westernmost station.
    let tube_type = schema.node_type_index("tube");
    let mut tubes: Vec<usize> = (0..n).filter(|&i| Some(nodes[i].node_type) == tube_type).collect();
    if let (Some(line), false) = (schema.edge_type_index("tube-line"), tubes.is_empty()) {
        tubes.sort_by(|&a, &b| local_xy[a].0.partial_cmp(&local_xy[b].0).expect("finite"));
        let mut chain = vec![tubes.remove(0)];
        while !tubes.is_empty() {
            let last = local_xy[*chain.last().expect("non-empty")];
            let (k, _) = tubes
                .iter()
                .enumerate()
                .map(|(k, &t)| (k, (local_xy[t].0 - last.0).hypot(local_xy[t].1 - last.1)))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
            chain.push(tubes.remove(k));
        }
        for w in chain.windows(2) {
            edges.push(EdgeRecord { src: w[0], dst: w[1], edge_type: line });
            edges.push(EdgeRecord { src: w[1], dst: w[0], edge_type: line });
        }
    }

    // POIs around cluster centres, then transport POIs around tube stations.
    let mut pois = Vec::new();
    let mut clusters = Vec::with_capacity(spec.clusters.len());
    for (c, cl) in spec.clusters.iter().enumerate() {
        let (cx, cy) = centres[c];
        let area_km2 = 2.0 * std::f64::consts::PI * (cl.sigma_m / 1000.0).powi(2);
        let mut expected = [0.0; 6];
        let mut sampled = [0usize; 6];
        for (j, category) in INDICATORS.iter().enumerate() {
            expected[j] = cl.intensity * densities[c][j] * area_km2;
            sampled[j] = poisson(&mut rng, expected[j]);
            for _ in 0..sampled[j] {
                let x = cx + cl.sigma_m * std.sample(&mut rng);
                let y = cy + cl.sigma_m * std.sample(&mut rng);
                let (lon, lat) = spec.to_lon_lat(x, y);
                pois.push(Poi { lon, lat, category: (*category).to_string() });
            }
        }
        let (lon, lat) = spec.to_lon_lat(cx, cy);
        clusters.push(ClusterInfo {
            index: c,
            lon,
            lat,
            sigma_m: cl.sigma_m,
            intensity: cl.intensity,
            mixture: mixtures[c],
            dominant: dominant(&mixtures[c]),
            road_classes: road_probs[c],
            poi_density: densities[c],
            poi_expected: expected,
            poi_sampled: sampled,
        });
    }
    let mut tube_transport_sampled = 0;
    for i in 0..n {
        if Some(nodes[i].node_type) != tube_type {
            continue;
        }
        let k = poisson(&mut rng, spec.tube_transport_pois);
        tube_transport_sampled += k;
        for _ in 0..k {
            let x = local_xy[i].0 + spec.tube_transport_sigma_m * std.sample(&mut rng);
            let y = local_xy[i].1 + spec.tube_transport_sigma_m * std.sample(&mut rng);
            let (lon, lat) = spec.to_lon_lat(x, y);
            pois.push(Poi { lon, lat, category: "transport".into() });
        }
    }

    let manifest = Manifest {
        spec: spec.clone(),
        archetypes: Archetype::ALL.iter().map(|&a| (a, a.template(bins))).collect(),
        clusters,
        nodes: infos,
        tube_transport_sampled,
    };
    let schema = Schema { feature_count: bins, ..schema };
    Ok(SyntheticCity {
        schema,
        nodes,
        edges,
        pois,
        manifest,
    })
}
