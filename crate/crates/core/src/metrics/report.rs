//! Metric reports as JSON and CSV, and SSIM maps as CSV or 8-bit PGM.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mse, psnr_from_mse, ssim, temporal_series, BatchMetrics, SsimParams};
use crate::error::{Error, Result};
use crate::grids::Field;

/// PSNR values as JSON numbers, with the `MSE = 0` sentinel as `"inf"`.
pub(crate) mod db {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("not a PSNR value: {t}"))),
        }
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// How headline figures are aggregated over a test series.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    /// Metrics per consecutive batch of frames, then averaged.
    #[default]
    Batch,
    /// Metrics over all frames at once.
    Global,
}

impl std::str::FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(Aggregate::Batch),
            "global" => Ok(Aggregate::Global),
            other => Err(Error::Config(format!(
                "aggregate must be batch or global, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mse: f64,
    #[serde(with = "db")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub frames: usize,
    /// Figures selected by the report's aggregation mode.
    pub headline: Summary,
    pub batch_mean: Summary,
    pub global: Summary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub series: Vec<BatchMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Per-member MSE over the whole series, when members were retained.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub member_mse: Vec<f64>,
}

impl ModelMetrics {
    pub fn compute(
        model: &str,
        pred: &[Field],
        truth: &[Field],
        batch: usize,
        params: &SsimParams,
        aggregate: Aggregate,
    ) -> Result<Self> {
        if pred.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "no frames to score for {model}"
            )));
        }
        let series = temporal_series(pred, truth, batch, params)?;
        let n = series.len() as f64;
        let batch_mean = Summary {
            mse: series.iter().map(|b| b.mse).sum::<f64>() / n,
            psnr: series.iter().map(|b| b.psnr).sum::<f64>() / n,
            ssim: series.iter().map(|b| b.ssim).sum::<f64>() / n,
        };
        let global_mse = mse(pred, truth)?;
        let ssims = pred
            .iter()
            .zip(truth)
            .map(|(p, t)| ssim(p, t, params))
            .collect::<Result<Vec<_>>>()?;
        let global = Summary {
            mse: global_mse,
            psnr: psnr_from_mse(global_mse),
            ssim: ssims.iter().sum::<f64>() / ssims.len() as f64,
        };
        Ok(ModelMetrics {
            model: model.to_string(),
            frames: pred.len(),
            headline: match aggregate {
                Aggregate::Batch => batch_mean,
                Aggregate::Global => global,
            },
            batch_mean,
            global,
            series,
            members: None,
            steps: None,
            member_mse: Vec::new(),
        })
    }
}

/// Why per-batch and global PSNR differ, with a worked reference figure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsnrDisclosure {
    pub reference_mse: f64,
    pub psnr_of_reference_mse: f64,
    pub reference_batch_mean_psnr: f64,
    pub note: String,
}

impl Default for PsnrDisclosure {
    fn default() -> Self {
        let reference_mse = 1.02e-3;
        let psnr = psnr_from_mse(reference_mse);
        PsnrDisclosure {
            reference_mse,
            psnr_of_reference_mse: psnr,
            reference_batch_mean_psnr: 30.32,
            note: format!(
                "batch_mean PSNR averages per-batch dB values; global PSNR applies \
                 20*log10(1/sqrt(MSE)) to the MSE of all frames. Since PSNR is convex in MSE, \
                 the batch mean is never below the PSNR of the mean batch MSE. Example: an aggregate \
                 MSE of {reference_mse:.2e} gives {psnr:.2} dB, so a figure of 30.32 dB \
                 at that MSE implies per-batch averaging."
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub aggregate: Aggregate,
    pub batch_frames: usize,
    pub ssim: SsimParams,
    pub models: Vec<ModelMetrics>,
    pub psnr_disclosure: PsnrDisclosure,
}

impl MetricReport {
    pub fn new(aggregate: Aggregate, batch_frames: usize, ssim: SsimParams) -> Self {
        MetricReport {
            aggregate,
            batch_frames,
            ssim,
            models: Vec::new(),
            psnr_disclosure: PsnrDisclosure::default(),
        }
    }

    pub fn model(&self, name: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// One row per model: headline figures followed by both aggregations.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "model",
            "mse",
            "psnr",
            "ssim",
            "mse_batch_mean",
            "psnr_batch_mean",
            "ssim_batch_mean",
            "mse_global",
            "psnr_global",
            "ssim_global",
        ])?;
        for m in &self.models {
            let (h, b, g) = (m.headline, m.batch_mean, m.global);
            w.write_record([
                m.model.clone(),
                h.mse.to_string(),
                fmt_db(h.psnr),
                h.ssim.to_string(),
                b.mse.to_string(),
                fmt_db(b.psnr),
                b.ssim.to_string(),
                g.mse.to_string(),
                fmt_db(g.psnr),
                g.ssim.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Temporal series of every model, one row per batch.
    pub fn write_series_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["model", "batch", "start", "frames", "mse", "psnr", "ssim"])?;
        for m in &self.models {
            for b in &m.series {
                w.write_record([
                    m.model.clone(),
                    b.batch.to_string(),
                    b.start.to_string(),
                    b.frames.to_string(),
                    b.mse.to_string(),
                    fmt_db(b.psnr),
                    b.ssim.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Writes a field as CSV, one grid row per line.
pub fn write_map_csv(field: &Field, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in field.values().rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct PgmScale {
    min: f32,
    max: f32,
}

/// Writes a field as a binary 8-bit PGM scaled linearly from its minimum
/// (0) to its maximum (255); the two bounds go to `<path>.json`.
pub fn write_map_pgm(field: &Field, path: &Path) -> Result<()> {
    let (min, max) = (field.min(), field.max());
    let span = (max - min) as f64;
    let (rows, cols) = field.grid().shape();
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    bytes.extend(field.as_slice().iter().map(|&v| {
        if span > 0.0 {
            (((v - min) as f64 / span) * 255.0)
                .round()
                .clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    let mut side = path.as_os_str().to_owned();
    side.push(".json");
    let side = std::path::PathBuf::from(side);
    let text = serde_json::to_string_pretty(&PgmScale { min, max })?;
    fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}
