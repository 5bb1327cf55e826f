//! MSE, PSNR and SSIM, per-pixel SSIM maps, temporal series and report
//! emission.

mod report;
mod ssim;

use serde::{Deserialize, Serialize};

pub use report::{
    write_map_csv, write_map_pgm, Aggregate, MetricReport, ModelMetrics, PsnrDisclosure, Summary,
};
pub use ssim::{gaussian_window, map_mean, ssim, ssim_map, ssim_map_values, SsimParams};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grids::{Field, Units};

fn check_pairs(pred: &[Field], truth: &[Field]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predicted frames vs {} truth frames",
            pred.len(),
            truth.len()
        )));
    }
    for (p, t) in pred.iter().zip(truth) {
        if p.grid().shape() != t.grid().shape() {
            return Err(Error::Shape(format!(
                "frame shapes differ: {:?} vs {:?}",
                p.grid().shape(),
                t.grid().shape()
            )));
        }
    }
    Ok(())
}

/// Mean squared error over all cells of all frames.
pub fn mse(pred: &[Field], truth: &[Field]) -> Result<f64> {
    check_pairs(pred, truth)?;
    mse_values(
        pred.iter().flat_map(|f| f.as_slice().iter().copied()),
        truth.iter().flat_map(|f| f.as_slice().iter().copied()),
    )
}

/// MSE of two equally long value streams.
pub fn mse_values(
    pred: impl IntoIterator<Item = f32>,
    truth: impl IntoIterator<Item = f32>,
) -> Result<f64> {
    let (mut sum, mut n) = (0.0f64, 0usize);
    let mut t = truth.into_iter();
    for p in pred {
        let q = t
            .next()
            .ok_or_else(|| Error::Shape("prediction longer than truth".into()))?;
        let d = p as f64 - q as f64;
        sum += d * d;
        n += 1;
    }
    if t.next().is_some() {
        return Err(Error::Shape("truth longer than prediction".into()));
    }
    if n == 0 {
        return Err(Error::Shape("no values to compare".into()));
    }
    Ok(sum / n as f64)
}

/// `20 log10(1 / sqrt(mse))` for unit peak; `+inf` when `mse == 0`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (1.0 / mse.sqrt()).log10()
    }
}

pub fn psnr(pred: &[Field], truth: &[Field]) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, truth)?))
}

/// Metrics of one consecutive block of frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub batch: usize,
    pub start: usize,
    pub frames: usize,
    pub mse: f64,
    #[serde(with = "report::db")]
    pub psnr: f64,
    pub ssim: f64,
}

/// One metrics triple per consecutive `batch`-frame block (the last block
/// may be short), in time order.
pub fn temporal_series(
    pred: &[Field],
    truth: &[Field],
    batch: usize,
    params: &SsimParams,
) -> Result<Vec<BatchMetrics>> {
    check_pairs(pred, truth)?;
    if batch == 0 {
        return Err(Error::Parameter("batch must be at least 1".into()));
    }
    let ssims = Exec::current().map_range(pred.len(), |i| ssim(&pred[i], &truth[i], params));
    let ssims = ssims.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (b, start) in (0..pred.len()).step_by(batch).enumerate() {
        let end = (start + batch).min(pred.len());
        let m = mse(&pred[start..end], &truth[start..end])?;
        let s = ssims[start..end].iter().sum::<f64>() / (end - start) as f64;
        out.push(BatchMetrics {
            batch: b,
            start,
            frames: end - start,
            mse: m,
            psnr: psnr_from_mse(m),
            ssim: s,
        });
    }
    Ok(out)
}

/// Cellwise mean of the per-frame SSIM maps.
pub fn mean_ssim_map(pred: &[Field], truth: &[Field], params: &SsimParams) -> Result<Field> {
    check_pairs(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::Parameter("mean SSIM map of an empty series".into()));
    }
    let maps = Exec::current().map_range(pred.len(), |i| {
        ssim_map_values(pred[i].values().view(), truth[i].values().view(), params)
    });
    let grid = *truth[0].grid();
    let mut acc = vec![0.0f64; grid.len()];
    for m in maps {
        for (a, v) in acc.iter_mut().zip(m?.iter()) {
            *a += v;
        }
    }
    let n = pred.len() as f64;
    Field::from_vec(
        grid,
        acc.into_iter().map(|a| (a / n) as f32).collect(),
        Units::Normalized,
    )
}
