//! The JSON run configuration and its command-line overrides.

use std::path::{Path, PathBuf};

use ecdbs::band_select::SimilarityMetric;
use ecdbs::hsi_io::SplitSpec;
use ecdbs::network::ModelConfig;
use ecdbs::train_eval::{LossConfig, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

/// Band-to-cluster ratio used when neither `clusters` nor
/// `downsample_rate` is given.
pub const DEFAULT_DOWNSAMPLE_RATE: usize = 16;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub t1: Option<PathBuf>,
    pub t2: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandConfig {
    pub neighbors: usize,
    /// Number of selected bands `b`; exclusive with `downsample_rate`.
    pub clusters: Option<usize>,
    /// `b = ⌈B / r_d⌉`; exclusive with `clusters`.
    pub downsample_rate: Option<usize>,
    pub expansion: usize,
    pub similarity_metric: SimilarityMetric,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            neighbors: ecdbs::band_graph::DEFAULT_NEIGHBORS,
            clusters: None,
            downsample_rate: None,
            expansion: 3,
            similarity_metric: SimilarityMetric::L2,
        }
    }
}

impl BandConfig {
    pub fn resolve_clusters(&self, bands: usize) -> Result<usize, CliError> {
        match (self.clusters, self.downsample_rate) {
            (Some(_), Some(_)) => Err(CliError::Usage(
                "bands.clusters and bands.downsample_rate are mutually exclusive".into(),
            )),
            (Some(b), None) => Ok(b),
            (None, rate) => {
                let rate = rate.unwrap_or(DEFAULT_DOWNSAMPLE_RATE);
                if rate == 0 {
                    return Err(CliError::Usage(
                        "bands.downsample_rate must be positive".into(),
                    ));
                }
                Ok(bands.div_ceil(rate))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub patch_size: usize,
    pub hidden: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            patch_size: 5,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let d = SplitSpec::default();
        Self {
            train_fraction: d.train_fraction,
            val_fraction: d.val_fraction,
        }
    }
}

/// Everything a subcommand needs. A single `seed` feeds every random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataPaths,
    pub bands: BandConfig,
    pub network: NetworkConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataPaths::default(),
            bands: BandConfig::default(),
            network: NetworkConfig::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Sets `key` (dotted path) in a JSON object tree, creating objects on the way.
fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key `{key}`")));
    }
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("`{key}`: `{part}` is not an object")))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("`{key}` does not name an object field")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `key=value`; the value is read as JSON and falls back to a string.
pub fn parse_override(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{s}` is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    /// Config file (if any), then `--set` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_path(&mut root, &k, v)?;
        }
        serde_json::from_value(root).map_err(|e| CliError::Usage(format!("configuration: {e}")))
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.split.train_fraction,
            val_fraction: self.split.val_fraction,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn model_config(&self, bands: usize) -> Result<ModelConfig, CliError> {
        Ok(ModelConfig {
            bands,
            clusters: self.bands.resolve_clusters(bands)?,
            expansion: self.bands.expansion,
            patch_size: self.network.patch_size,
            hidden: self.network.hidden,
            neighbors: self.bands.neighbors,
            seed: self.seed,
            similarity_metric: self.bands.similarity_metric,
        })
    }

    pub fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        path.clone().ok_or_else(|| {
            CliError::Usage(format!(
                "missing required setting `{key}` (use --set {key}=<path>)"
            ))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }
}
