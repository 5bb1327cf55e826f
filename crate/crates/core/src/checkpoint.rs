//! Checkpoint files: an 8-byte magic, a little-endian `u32` header length,
//! a JSON header describing the predictor, then the weights as
//! little-endian `f32` in parameter order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionNet, NoiseEmbedding, OutputParam, TrainConfig};
use crate::error::{Error, Result};
use crate::grids::{GeoBox, Grid2D};
use crate::models::{Model, ModelSpec, PredictorKind};

pub const MAGIC: &[u8; 8] = b"WINDSR\0\x01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "predictor", rename_all = "snake_case")]
pub enum Predictor {
    Network {
        model: ModelSpec,
        /// Number of U-Net levels, when the model has any.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        depth: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upscale: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        embedding: Option<NoiseEmbedding>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output: Option<OutputParam>,
        param_lengths: Vec<usize>,
    },
    /// Test predictor that returns the known targets of a high-res store.
    Oracle { targets: PathBuf },
}

/// Geometry of the high-resolution grid a predictor was trained on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub rows: usize,
    pub cols: usize,
    pub geobox: GeoBox,
}

impl GridMeta {
    pub fn of(grid: &Grid2D) -> Self {
        GridMeta {
            rows: grid.rows(),
            cols: grid.cols(),
            geobox: *grid.geobox(),
        }
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.rows, self.cols, self.geobox)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    #[serde(flatten)]
    pub predictor: Predictor,
    #[serde(default)]
    pub lr_norm_max: Option<f64>,
    #[serde(default)]
    pub hr_norm_max: Option<f64>,
    #[serde(default)]
    pub hr_grid: Option<GridMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub epochs_completed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub weights: Vec<f32>,
}

fn network_header(
    model: &Model<f32>,
    embedding: Option<NoiseEmbedding>,
    output: Option<OutputParam>,
) -> CheckpointHeader {
    let spec = model.spec();
    let depth = match &spec {
        ModelSpec::DiffusionUnet(s) | ModelSpec::Runet(s) => Some(s.depth()),
        _ => None,
    };
    CheckpointHeader {
        predictor: Predictor::Network {
            upscale: spec.upscale(),
            model: spec,
            depth,
            embedding,
            output,
            param_lengths: model.param_shapes(),
        },
        lr_norm_max: None,
        hr_norm_max: None,
        hr_grid: None,
        train: None,
        epochs_completed: 0,
    }
}

impl Checkpoint {
    pub fn from_diffusion(net: &DiffusionNet<f32>) -> Self {
        Checkpoint {
            header: network_header(&net.model, Some(net.embedding.clone()), Some(net.output)),
            weights: net.model.flat_weights(),
        }
    }

    pub fn from_model(model: &Model<f32>) -> Self {
        Checkpoint {
            header: network_header(model, None, None),
            weights: model.flat_weights(),
        }
    }

    pub fn oracle(targets: impl Into<PathBuf>) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                predictor: Predictor::Oracle {
                    targets: targets.into(),
                },
                lr_norm_max: None,
                hr_norm_max: None,
                hr_grid: None,
                train: None,
                epochs_completed: 0,
            },
            weights: Vec::new(),
        }
    }

    pub fn kind(&self) -> Option<PredictorKind> {
        match &self.header.predictor {
            Predictor::Network { model, .. } => Some(model.kind()),
            Predictor::Oracle { .. } => None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let len = u32::try_from(header.len())
            .map_err(|_| Error::Data("checkpoint header exceeds 4 GiB".into()))?;
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.weights.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&header);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Data("not a checkpoint file (bad magic)".into()));
        }
        let len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
        let body = &bytes[12..];
        if body.len() < len || !(body.len() - len).is_multiple_of(4) {
            return Err(Error::Data("truncated checkpoint".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..len])?;
        let weights: Vec<f32> = body[len..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Predictor::Network { param_lengths, .. } = &header.predictor {
            let expect: usize = param_lengths.iter().sum();
            if expect != weights.len() {
                return Err(Error::Data(format!(
                    "checkpoint declares {expect} weights but holds {}",
                    weights.len()
                )));
            }
        }
        Ok(Checkpoint { header, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Rebuilds the stored network with its weights.
    pub fn model(&self) -> Result<Model<f32>> {
        match &self.header.predictor {
            Predictor::Network {
                model,
                param_lengths,
                ..
            } => {
                let mut m = Model::new(model, 0)?;
                if &m.param_shapes() != param_lengths {
                    return Err(Error::Data(
                        "checkpoint parameter layout does not match its spec".into(),
                    ));
                }
                m.load_flat_weights(&self.weights)?;
                Ok(m)
            }
            Predictor::Oracle { .. } => {
                Err(Error::Config("oracle checkpoint holds no network".into()))
            }
        }
    }

    pub fn diffusion_net(&self) -> Result<DiffusionNet<f32>> {
        match &self.header.predictor {
            Predictor::Network {
                embedding: Some(emb),
                output,
                ..
            } => DiffusionNet::from_parts(self.model()?, emb.clone(), output.unwrap_or_default()),
            _ => Err(Error::Config(
                "checkpoint does not hold a diffusion denoiser".into(),
            )),
        }
    }
}
