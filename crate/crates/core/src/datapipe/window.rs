use chrono::{DateTime, Duration, Utc};

use super::store::DatasetStore;
use crate::error::{Error, Result};
use crate::grids::{bilinear_resample, Field, FieldSeries, Grid2D};
use crate::models::Tensor;

/// Hours of the conditioning frames relative to the target time.
pub const CONTEXT_OFFSETS_H: [i64; 4] = [-6, -3, 0, 3];

/// Four upsampled low-resolution frames and the high-resolution target at `t0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    pub t0: DateTime<Utc>,
    /// Low-resolution frames at the context offsets, resampled to the
    /// high-resolution grid.
    pub conditioning: Vec<Field>,
    pub target: Field,
    /// The same four frames on their native low-resolution grid.
    pub lr: Vec<Field>,
}

fn context_times(t0: DateTime<Utc>) -> [DateTime<Utc>; 4] {
    CONTEXT_OFFSETS_H.map(|h| t0 + Duration::hours(h))
}

fn build(
    t0: DateTime<Utc>,
    lr: Vec<Field>,
    target: Field,
    hr_grid: &Grid2D,
) -> Result<SampleWindow> {
    if !target.grid().same_as(hr_grid) {
        return Err(Error::Extent(
            "target is not on the high-resolution grid".into(),
        ));
    }
    let conditioning = lr
        .iter()
        .map(|f| bilinear_resample(f, hr_grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleWindow {
        t0,
        conditioning,
        target,
        lr,
    })
}

/// Builds the window at `t0` from in-memory series.
pub fn assemble_window(
    lr: &FieldSeries,
    hr: &FieldSeries,
    t0: DateTime<Utc>,
    hr_grid: &Grid2D,
) -> Result<SampleWindow> {
    let mut frames = Vec::with_capacity(4);
    for t in context_times(t0) {
        let f = lr
            .frame_at(t)
            .ok_or_else(|| Error::Boundary(format!("no low-res frame at {t} for window {t0}")))?;
        frames.push(f.clone());
    }
    let target = hr
        .frame_at(t0)
        .ok_or_else(|| Error::Boundary(format!("no high-res frame at {t0}")))?
        .clone();
    build(t0, frames, target, hr_grid)
}

/// Target times whose four context frames and target all exist, in order.
pub fn valid_t0s(
    hr_times: impl IntoIterator<Item = DateTime<Utc>>,
    has_lr: impl Fn(DateTime<Utc>) -> bool,
) -> Vec<DateTime<Utc>> {
    hr_times
        .into_iter()
        .filter(|&t| context_times(t).into_iter().all(&has_lr))
        .collect()
}

/// Stacks fields of one grid into a `[1, k, rows, cols]` tensor.
pub fn fields_to_tensor(fields: &[Field]) -> Result<Tensor<f32>> {
    let first = fields
        .first()
        .ok_or_else(|| Error::Shape("cannot stack zero fields".into()))?;
    let grid = first.grid();
    let mut data = Vec::with_capacity(fields.len() * grid.len());
    for f in fields {
        if !f.grid().same_as(grid) {
            return Err(Error::Extent("stacked fields must share a grid".into()));
        }
        data.extend_from_slice(f.as_slice());
    }
    Tensor::from_vec([1, fields.len(), grid.rows(), grid.cols()], data)
}

/// A low-resolution and a high-resolution store read together as windows.
/// Frames are read normalised and on demand.
#[derive(Clone, Debug)]
pub struct DatasetPair {
    pub lr: DatasetStore,
    pub hr: DatasetStore,
}

impl DatasetPair {
    pub fn new(lr: DatasetStore, hr: DatasetStore) -> Self {
        DatasetPair { lr, hr }
    }

    pub fn open(lr: impl AsRef<std::path::Path>, hr: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(DatasetPair::new(
            DatasetStore::open(lr)?,
            DatasetStore::open(hr)?,
        ))
    }

    pub fn hr_grid(&self) -> &Grid2D {
        self.hr.grid()
    }

    pub fn valid_t0s(&self) -> Vec<DateTime<Utc>> {
        valid_t0s(self.hr.times(), |t| self.lr.index_of(t).is_some())
    }

    pub fn window(&self, t0: DateTime<Utc>) -> Result<SampleWindow> {
        let frames = context_frames(&self.lr, t0)?;
        let j = self
            .hr
            .index_of(t0)
            .ok_or_else(|| Error::Boundary(format!("no high-res frame at {t0}")))?;
        let target = self.hr.read_normalized(j)?;
        build(t0, frames, target, self.hr.grid())
    }
}

/// The four normalised low-resolution frames around `t0`.
pub fn context_frames(lr: &DatasetStore, t0: DateTime<Utc>) -> Result<Vec<Field>> {
    context_times(t0)
        .into_iter()
        .map(|t| {
            let i = lr.index_of(t).ok_or_else(|| {
                Error::Boundary(format!("no low-res frame at {t} for window {t0}"))
            })?;
            lr.read_normalized(i)
        })
        .collect()
}

/// Target times on the 3-hour marks of a low-resolution store whose four
/// context frames all exist. Used when no high-resolution truth is at hand.
pub fn inference_t0s(lr: &DatasetStore) -> Vec<DateTime<Utc>> {
    let marks = lr
        .times()
        .into_iter()
        .filter(|t| super::on_three_hour_mark(*t));
    valid_t0s(marks, |t| lr.index_of(t).is_some())
}
