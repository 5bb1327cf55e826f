//! `.f32grid` stores: raw little-endian `f32` frames `[time][row][col]` plus
//! a JSON sidecar with the grid, time axis, units and normalisation maximum.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{Field, FieldSeries, GeoBox, Grid2D, Units};

pub const GRID_EXT: &str = "f32grid";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    LowRes,
    HighRes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub rows: usize,
    pub cols: usize,
    pub times: usize,
    pub geobox: GeoBox,
    pub t0: DateTime<Utc>,
    pub step_hours: u32,
    pub units: Units,
    pub norm_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
}

impl Sidecar {
    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.rows, self.cols, self.geobox)
    }

    fn frame_bytes(&self) -> u64 {
        (self.rows * self.cols * 4) as u64
    }

    fn validate(&self) -> Result<()> {
        if !matches!(self.step_hours, 1 | 3) {
            return Err(Error::Data(format!(
                "step_hours must be 1 or 3, got {}",
                self.step_hours
            )));
        }
        if self.times == 0 {
            return Err(Error::EmptyDataset("store has no frames".into()));
        }
        if let Some(m) = self.norm_max {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Data(format!("norm_max must be positive, got {m}")));
            }
        }
        self.grid().map(|_| ())
    }
}

/// Binary path and sidecar path for a store name (extension optional).
pub fn store_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let p = path.as_ref();
    let base = if p.extension().is_some_and(|e| e == GRID_EXT || e == "json") {
        p.with_extension("")
    } else {
        p.to_path_buf()
    };
    let mut bin = base.clone().into_os_string();
    bin.push(".");
    bin.push(GRID_EXT);
    let mut json = base.into_os_string();
    json.push(".json");
    (bin.into(), json.into())
}

/// A read-only handle on one store. Frames are read on demand, so the
/// handle is cheap to clone and share between threads.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStore {
    bin: PathBuf,
    meta: Sidecar,
    grid: Grid2D,
}

impl DatasetStore {
    /// Writes `series` as a store. Values are stored as given; `norm_max`
    /// is recorded for later normalised reads.
    pub fn create(
        path: impl AsRef<Path>,
        series: &FieldSeries,
        role: Option<Role>,
        norm_max: Option<f64>,
    ) -> Result<Self> {
        let (bin, json) = store_paths(&path);
        if let Some(dir) = bin.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let grid = *series.grid();
        let meta = Sidecar {
            rows: grid.rows(),
            cols: grid.cols(),
            times: series.len(),
            geobox: *grid.geobox(),
            t0: series.t0(),
            step_hours: series.step_hours(),
            units: series.units(),
            norm_max,
            role,
        };
        meta.validate()?;
        let file = File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut w = BufWriter::new(file);
        for frame in series.frames() {
            for v in frame.as_slice() {
                w.write_all(&v.to_le_bytes())
                    .map_err(|e| Error::io(&bin, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&bin, e))?;
        let text = serde_json::to_string_pretty(&meta)?;
        fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
        Ok(DatasetStore { bin, meta, grid })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let (bin, json) = store_paths(&path);
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let meta: Sidecar = serde_json::from_str(&text)?;
        meta.validate()?;
        let len = fs::metadata(&bin).map_err(|e| Error::io(&bin, e))?.len();
        let expect = meta.frame_bytes() * meta.times as u64;
        if len != expect {
            return Err(Error::Data(format!(
                "{} holds {len} bytes, sidecar implies {expect}",
                bin.display()
            )));
        }
        let grid = meta.grid()?;
        Ok(DatasetStore { bin, meta, grid })
    }

    pub fn path(&self) -> &Path {
        &self.bin
    }

    pub fn meta(&self) -> &Sidecar {
        &self.meta
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.meta.times
    }

    pub fn is_empty(&self) -> bool {
        self.meta.times == 0
    }

    pub fn units(&self) -> Units {
        self.meta.units
    }

    pub fn norm_max(&self) -> Option<f64> {
        self.meta.norm_max
    }

    pub fn role(&self) -> Option<Role> {
        self.meta.role
    }

    pub fn time_at(&self, index: usize) -> DateTime<Utc> {
        self.meta.t0 + chrono::Duration::hours(self.meta.step_hours as i64 * index as i64)
    }

    pub fn times(&self) -> Vec<DateTime<Utc>> {
        (0..self.len()).map(|i| self.time_at(i)).collect()
    }

    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        crate::grids::index_in(self.meta.t0, self.meta.step_hours, self.len(), t)
    }

    /// Frame `index` exactly as stored.
    pub fn read_frame(&self, index: usize) -> Result<Field> {
        if index >= self.len() {
            return Err(Error::Boundary(format!(
                "frame {index} outside store of {} frames",
                self.len()
            )));
        }
        let n = self.grid.len();
        let mut bytes = vec![0u8; n * 4];
        let mut f = File::open(&self.bin).map_err(|e| Error::io(&self.bin, e))?;
        f.seek(SeekFrom::Start(index as u64 * self.meta.frame_bytes()))
            .and_then(|_| f.read_exact(&mut bytes))
            .map_err(|e| Error::io(&self.bin, e))?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Field::from_vec(self.grid, values, self.meta.units)
    }

    /// Frame `index` in normalised units: physical stores are divided by
    /// their `norm_max`; already-normalised stores are returned unchanged.
    pub fn read_normalized(&self, index: usize) -> Result<Field> {
        let f = self.read_frame(index)?;
        match self.meta.units {
            Units::Normalized => Ok(f),
            Units::MetersPerSecond => {
                let m = self.meta.norm_max.ok_or_else(|| {
                    Error::Data(format!("{} has no norm_max", self.bin.display()))
                })?;
                Ok(f.map(|v| (v as f64 / m) as f32)?
                    .with_units(Units::Normalized))
            }
        }
    }

    /// Frame `index` in m/s, denormalising with `norm_max` when needed.
    pub fn read_physical(&self, index: usize) -> Result<Field> {
        let f = self.read_frame(index)?;
        match self.meta.units {
            Units::MetersPerSecond => Ok(f),
            Units::Normalized => {
                let m = self.meta.norm_max.ok_or_else(|| {
                    Error::Data(format!(
                        "{} has no norm_max to denormalise",
                        self.bin.display()
                    ))
                })?;
                Ok(f.map(|v| (v as f64 * m) as f32)?
                    .with_units(Units::MetersPerSecond))
            }
        }
    }

    /// Loads every frame as stored. Intended for small stores and tests.
    pub fn read_series(&self) -> Result<FieldSeries> {
        let frames = (0..self.len())
            .map(|i| self.read_frame(i))
            .collect::<Result<Vec<_>>>()?;
        FieldSeries::new(self.meta.t0, self.meta.step_hours, frames)
    }
}
