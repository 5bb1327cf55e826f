//! Dataset persistence, temporal alignment, normalisation, sample windows,
//! batch generation and the synthetic paired-dataset generator.

mod batch;
mod store;
mod synth;
mod window;

use chrono::{DateTime, Timelike, Utc};

pub use batch::{prefetch, Batch, BatchGenerator, BatchMode, BatchSpec, Prefetch};
pub use store::{store_paths, DatasetStore, Role, Sidecar, GRID_EXT};
pub use synth::{synth_generate, KernelSpec, SynthConfig, SynthOutput};
pub use window::{
    assemble_window, context_frames, fields_to_tensor, inference_t0s, valid_t0s, DatasetPair,
    SampleWindow, CONTEXT_OFFSETS_H,
};

use crate::error::{Error, Result};
use crate::grids::{FieldSeries, Units};

fn on_three_hour_mark(t: DateTime<Utc>) -> bool {
    t.hour().is_multiple_of(3) && t.minute() == 0 && t.second() == 0 && t.nanosecond() == 0
}

/// Pairs a low-resolution series (hourly or 3-hourly) with a 3-hourly
/// high-resolution series on their shared 00, 03, ..., 21 UTC marks.
pub fn align_timestamps(lr: &FieldSeries, hr: &FieldSeries) -> Result<(FieldSeries, FieldSeries)> {
    if !matches!(lr.step_hours(), 1 | 3) {
        return Err(Error::Alignment(format!(
            "low-res step must be 1h or 3h, got {}h",
            lr.step_hours()
        )));
    }
    if hr.step_hours() != 3 {
        return Err(Error::Alignment(format!(
            "high-res step must be 3h, got {}h",
            hr.step_hours()
        )));
    }
    let mut lr_frames = Vec::new();
    let mut hr_frames = Vec::new();
    let mut first = None;
    for (i, t) in hr.times().enumerate() {
        if !on_three_hour_mark(t) {
            continue;
        }
        if let Some(f) = lr.frame_at(t) {
            // Shared marks of two uniform series are contiguous.
            first.get_or_insert(t);
            lr_frames.push(f.clone());
            hr_frames.push(hr.frames()[i].clone());
        }
    }
    let t0 = first.ok_or_else(|| {
        Error::Alignment(format!(
            "no shared 3-hourly timestamps between [{}, {}] and [{}, {}]",
            lr.t0(),
            lr.end(),
            hr.t0(),
            hr.end()
        ))
    })?;
    Ok((
        FieldSeries::new(t0, 3, lr_frames)?,
        FieldSeries::new(t0, 3, hr_frames)?,
    ))
}

/// Maximum over every cell of every frame.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn fit_norm_max(train: &FieldSeries) -> Result<f64> {
    let mut max = f64::NEG_INFINITY;
    for f in train.frames() {
        for &v in f.as_slice() {
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value {v} in training series"
                )));
            }
            max = max.max(v as f64);
        }
    }
    if !(max > 0.0) {
        return Err(Error::Data(format!(
            "training maximum {max} is not positive"
        )));
    }
    Ok(max)
}

/// Divides every value by `norm_max`. Values above `norm_max` are kept, not
/// clipped.
pub fn normalize(series: &FieldSeries, norm_max: f64) -> Result<FieldSeries> {
    if !(norm_max > 0.0 && norm_max.is_finite()) {
        return Err(Error::Parameter(format!(
            "norm_max must be positive, got {norm_max}"
        )));
    }
    let frames = series
        .frames()
        .iter()
        .map(|f| {
            Ok(f.map(|v| (v as f64 / norm_max) as f32)?
                .with_units(Units::Normalized))
        })
        .collect::<Result<Vec<_>>>()?;
    FieldSeries::new(series.t0(), series.step_hours(), frames)
}
