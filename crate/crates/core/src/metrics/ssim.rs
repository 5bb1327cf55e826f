//! Gaussian-windowed SSIM. Local statistics are taken over the window
//! centred on each pixel; near the border the window is truncated to the
//! field and renormalised, so the map has the size of its inputs.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grids::{Field, Units};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Odd window side length.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the data.
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.range).powi(2)
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.window.is_multiple_of(2)
            || !(self.sigma > 0.0)
            || !(self.c1() > 0.0)
            || !(self.c2() > 0.0)
        {
            return Err(Error::Parameter(format!(
                "invalid SSIM parameters {self:?}"
            )));
        }
        Ok(())
    }
}

/// 1-D Gaussian taps (sum 1); the 2-D window is their outer product.
pub fn gaussian_window(params: &SsimParams) -> Vec<f64> {
    let r = (params.window / 2) as f64;
    let taps: Vec<f64> = (0..params.window)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * params.sigma * params.sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Weighted local mean along one axis with border renormalisation. Rows
/// are computed independently under the current [`Exec`] policy.
fn filter_axis(src: &Array2<f64>, taps: &[f64], along_rows: bool) -> Array2<f64> {
    let (rows, cols) = src.dim();
    let r = taps.len() / 2;
    let out_rows = Exec::current().map_range(rows, |i| {
        (0..cols)
            .map(|j| {
                let (pos, len) = if along_rows { (i, rows) } else { (j, cols) };
                let lo = pos.saturating_sub(r);
                let hi = (pos + r).min(len - 1);
                let (mut acc, mut wsum) = (0.0, 0.0);
                for k in lo..=hi {
                    let w = taps[k + r - pos];
                    let v = if along_rows { src[[k, j]] } else { src[[i, k]] };
                    acc += w * v;
                    wsum += w;
                }
                acc / wsum
            })
            .collect::<Vec<f64>>()
    });
    Array2::from_shape_vec((rows, cols), out_rows.concat()).expect("row lengths match")
}

fn local_mean(src: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    filter_axis(&filter_axis(src, taps, true), taps, false)
}

/// Per-pixel SSIM values.
pub fn ssim_map_values(
    a: ArrayView2<f32>,
    b: ArrayView2<f32>,
    params: &SsimParams,
) -> Result<Array2<f64>> {
    params.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "SSIM inputs differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (rows, cols) = a.dim();
    if rows < params.window || cols < params.window {
        return Err(Error::Shape(format!(
            "field {rows}x{cols} is smaller than the {0}x{0} SSIM window",
            params.window
        )));
    }
    let taps = gaussian_window(params);
    let x = a.mapv(|v| v as f64);
    let y = b.mapv(|v| v as f64);
    let mx = local_mean(&x, &taps);
    let my = local_mean(&y, &taps);
    let exx = local_mean(&(&x * &x), &taps);
    let eyy = local_mean(&(&y * &y), &taps);
    let exy = local_mean(&(&x * &y), &taps);
    let (c1, c2) = (params.c1(), params.c2());
    Ok(Array2::from_shape_fn((rows, cols), |idx| {
        let (ux, uy) = (mx[idx], my[idx]);
        let vx = exx[idx] - ux * ux;
        let vy = eyy[idx] - uy * uy;
        let cxy = exy[idx] - ux * uy;
        ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    }))
}

/// Mean of an SSIM map, accumulated in row-major order.
pub fn map_mean(map: &Array2<f64>) -> f64 {
    map.iter().sum::<f64>() / map.len() as f64
}

/// SSIM map of two fields on the same grid shape.
pub fn ssim_map(pred: &Field, truth: &Field, params: &SsimParams) -> Result<Field> {
    let m = ssim_map_values(pred.values().view(), truth.values().view(), params)?;
    Field::from_vec(
        *truth.grid(),
        m.iter().map(|&v| v as f32).collect(),
        Units::Normalized,
    )
}

/// Mean of the SSIM map.
pub fn ssim(pred: &Field, truth: &Field, params: &SsimParams) -> Result<f64> {
    let m = ssim_map_values(pred.values().view(), truth.values().view(), params)?;
    Ok(map_mean(&m))
}
