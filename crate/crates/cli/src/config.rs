use std::path::{Path, PathBuf};

use heterograph::synth::CitySpec;
use heterograph::train::TrainConfig;
use heterograph::{ModelKind, Schema};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random choice: city, split and initialisation.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Models fitted by `train` and compared by `eval`.
    pub models: Vec<ModelKind>,
    pub data: DataConfig,
    pub synth: CitySpec,
    /// `model` here is the one ablated and explained.
    pub train: TrainConfig,
    pub explain: ExplainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            models: ModelKind::ALL.to_vec(),
            data: DataConfig::default(),
            synth: CitySpec::default(),
            train: TrainConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Default to the files written by `synth`.
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub poi: Option<PathBuf>,
    pub features: usize,
    pub radius_m: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            nodes: None,
            edges: None,
            poi: None,
            features: 64,
            radius_m: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub ig_steps: usize,
    pub mixed_fraction: f64,
    /// Cap on the test nodes averaged into the heatmap; all when unset.
    pub heatmap_nodes: Option<usize>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            ig_steps: 200,
            mixed_fraction: 0.10,
            heatmap_nodes: None,
        }
    }
}

/// A parsed config with the file's hash and the directory relative paths
/// are resolved against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub sha256: String,
    pub base: PathBuf,
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let config: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(Loaded {
        config,
        sha256: format!("{:x}", Sha256::digest(&bytes)),
        base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.train.validate().map_err(|e| CliError::Config(format!("[train] {e}")))?;
        self.synth
            .validate(&Schema::default())
            .map_err(|e| CliError::Config(format!("[synth] {e}")))?;
        if self.models.is_empty() {
            return bad("models: at least one model is required".into());
        }
        if self.explain.ig_steps == 0 {
            return bad("[explain] ig_steps must be at least 1".into());
        }
        if !(self.explain.mixed_fraction > 0.0 && self.explain.mixed_fraction <= 1.0) {
            return bad(format!("[explain] mixed_fraction must lie in (0, 1], got {}", self.explain.mixed_fraction));
        }
        if self.explain.heatmap_nodes == Some(0) {
            return bad("[explain] heatmap_nodes must be positive".into());
        }
        if !(self.data.radius_m > 0.0) || self.data.features == 0 {
            return bad("[data] radius_m and features must be positive".into());
        }
        Ok(())
    }
}

impl Loaded {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.out_dir)
    }

    pub fn command_dir(&self, command: &str) -> PathBuf {
        self.out_dir().join(command)
    }

    fn data_path(&self, given: &Option<PathBuf>, file: &str) -> PathBuf {
        match given {
            Some(p) => self.resolve(p),
            None => self.command_dir("synth").join(file),
        }
    }

    pub fn nodes_path(&self) -> PathBuf {
        self.data_path(&self.config.data.nodes, "nodes.csv")
    }

    pub fn edges_path(&self) -> PathBuf {
        self.data_path(&self.config.data.edges, "edges.csv")
    }

    pub fn poi_path(&self) -> PathBuf {
        self.data_path(&self.config.data.poi, "poi.csv")
    }
}
