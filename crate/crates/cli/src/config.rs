//! Run configuration: a JSON document whose every field can be overridden
//! by a `--dotted.name value` flag.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use windsr_core::datapipe::SynthConfig;
use windsr_core::diffusion::{OutputParam, TrainConfig};
use windsr_core::ensemble::EnsembleSpec;
use windsr_core::grids::Extraction;
use windsr_core::metrics::{Aggregate, SsimParams};
use windsr_core::models::{ModelSpec, UNetSpec};
use windsr_core::validation::SlotRule;
use windsr_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedPath {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Low-resolution input store (training input, sampling input, or the
    /// source of the bilinear baseline when evaluating).
    pub lr_store: Option<PathBuf>,
    /// High-resolution store (training target or evaluation truth).
    pub hr_store: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Prediction stores scored by `evaluate`.
    pub predictions: Vec<NamedPath>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sampling {
    pub members: usize,
    pub steps: usize,
    pub seed: u64,
    /// Fresh-noise scale per reverse step; 0 is deterministic DDIM.
    pub eta: f64,
    pub max_batch: usize,
    pub keep_members: bool,
}

impl Default for Sampling {
    fn default() -> Self {
        let e = EnsembleSpec::default();
        Sampling {
            members: e.members,
            steps: e.steps,
            seed: e.base_seed,
            eta: e.eta,
            max_batch: e.max_batch,
            keep_members: false,
        }
    }
}

impl Sampling {
    pub fn ensemble(&self) -> EnsembleSpec {
        EnsembleSpec {
            members: self.members,
            steps: self.steps,
            base_seed: self.seed,
            eta: self.eta,
            max_batch: self.max_batch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub aggregate: Aggregate,
    /// Frames per batch of the temporal series.
    pub batch_frames: usize,
    pub ssim: SsimParams,
    pub series: bool,
    pub mean_map: bool,
    /// Include the bilinear baseline (requires `paths.lr_store`).
    pub bilinear: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            aggregate: Aggregate::Batch,
            batch_frames: 32,
            ssim: SsimParams::default(),
            series: true,
            mean_map: true,
            bilinear: true,
        }
    }
}

/// A product store for validation; `u`/`v` component stores may replace
/// `path` when the product holds wind components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductPath {
    pub name: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub u: Option<PathBuf>,
    #[serde(default)]
    pub v: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub stations: Option<PathBuf>,
    pub products: Vec<ProductPath>,
    pub slot: SlotRule,
    pub extraction: Extraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub synth: SynthConfig,
    pub model: ModelSpec,
    pub output: OutputParam,
    pub train: TrainConfig,
    pub sampling: Sampling,
    pub metrics: MetricsConfig,
    pub validation: ValidationConfig,
    /// Worker-thread cap; `None` uses every core.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            synth: SynthConfig::desk(2000, 200, 0),
            model: ModelSpec::DiffusionUnet(UNetSpec::desk()),
            output: OutputParam::default(),
            train: TrainConfig::default(),
            sampling: Sampling::default(),
            metrics: MetricsConfig::default(),
            validation: ValidationConfig::default(),
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `(dotted.name, value)` overrides. Values are read as JSON when
    /// they parse, otherwise as strings.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for (key, raw) in overrides {
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            set_path(&mut doc, key, value)?;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(format!("after overrides: {e}")))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.sampling.ensemble().validate()?;
        self.validation.slot.validate()?;
        if self.metrics.batch_frames == 0 {
            return Err(Error::Config(
                "metrics.batch_frames must be at least 1".into(),
            ));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: {part:?} is not an array index")))?;
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("{key}: index {idx} out of range")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null => {
                *node = Value::Object(Default::default());
                match node {
                    Value::Object(map) if last => {
                        map.insert(part.to_string(), value);
                        return Ok(());
                    }
                    Value::Object(map) => map
                        .entry(part.to_string())
                        .or_insert_with(|| Value::Object(Default::default())),
                    _ => unreachable!(),
                }
            }
            _ => {
                return Err(Error::Config(format!(
                    "{key}: cannot descend into a scalar at {part:?}"
                )))
            }
        };
    }
    Ok(())
}
