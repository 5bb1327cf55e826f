//! Georeferenced 2-D scalar fields and the operators that move them between
//! resolutions.
//!
//! Grids are regular in latitude/longitude. Row 0 is the northern edge and
//! column 0 the western edge, so `lat(row) = north - row * dlat` and
//! `lon(col) = west + col * dlon`. Values are stored as `f32`; all
//! accumulation is done in `f64`.

use chrono::{DateTime, Duration, Utc};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

const EXTENT_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoBox {
    pub north: f64,
    pub south: f64,
    pub east: f64,
    pub west: f64,
}

impl GeoBox {
    pub fn new(north: f64, south: f64, east: f64, west: f64) -> Result<Self> {
        let b = GeoBox {
            north,
            south,
            east,
            west,
        };
        b.validate()?;
        Ok(b)
    }

    /// Regional box used by the reference experiments (Italy and surroundings).
    pub fn study_area() -> Self {
        GeoBox {
            north: 47.75,
            south: 35.0,
            east: 18.75,
            west: 6.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.north, self.south, self.east, self.west]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Extent(format!("non-finite geobox {self:?}")));
        }
        if self.north <= self.south || self.east <= self.west {
            return Err(Error::Extent(format!(
                "geobox requires north > south and east > west, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat <= self.north + EXTENT_EPS
            && lat >= self.south - EXTENT_EPS
            && lon <= self.east + EXTENT_EPS
            && lon >= self.west - EXTENT_EPS
    }

    fn approx_eq(&self, other: &GeoBox) -> bool {
        (self.north - other.north).abs() <= EXTENT_EPS
            && (self.south - other.south).abs() <= EXTENT_EPS
            && (self.east - other.east).abs() <= EXTENT_EPS
            && (self.west - other.west).abs() <= EXTENT_EPS
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid2D {
    rows: usize,
    cols: usize,
    geobox: GeoBox,
}

impl Grid2D {
    pub fn new(rows: usize, cols: usize, geobox: GeoBox) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::Shape(format!(
                "grid needs at least 2x2 cells, got {rows}x{cols}"
            )));
        }
        geobox.validate()?;
        Ok(Grid2D { rows, cols, geobox })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn geobox(&self) -> &GeoBox {
        &self.geobox
    }

    pub fn dlat(&self) -> f64 {
        (self.geobox.north - self.geobox.south) / (self.rows - 1) as f64
    }

    pub fn dlon(&self) -> f64 {
        (self.geobox.east - self.geobox.west) / (self.cols - 1) as f64
    }

    pub fn lat(&self, row: usize) -> f64 {
        self.geobox.north - row as f64 * self.dlat()
    }

    pub fn lon(&self, col: usize) -> f64 {
        self.geobox.west + col as f64 * self.dlon()
    }

    /// Fractional (row, col) position of a coordinate, unclamped.
    pub fn fractional_index(&self, lat: f64, lon: f64) -> (f64, f64) {
        (
            (self.geobox.north - lat) / self.dlat(),
            (lon - self.geobox.west) / self.dlon(),
        )
    }

    /// Same cell count and the same extent up to rounding.
    pub fn same_as(&self, other: &Grid2D) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.geobox.approx_eq(&other.geobox)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    #[serde(rename = "m/s")]
    MetersPerSecond,
    #[serde(rename = "normalized")]
    Normalized,
}

/// A 2-D scalar field on a [`Grid2D`].
///
/// Values must be finite. Normalized fields are not range-checked: test
/// splits normalized by the training maximum may legitimately exceed 1, and
/// intermediate diffusion states are unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid2D,
    values: Array2<f32>,
    units: Units,
}

impl Field {
    pub fn new(grid: Grid2D, values: Array2<f32>, units: Units) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::Shape(format!(
                "values {:?} do not match grid {:?}",
                values.dim(),
                grid.shape()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite field value {bad}")));
        }
        Ok(Field {
            grid,
            values,
            units,
        })
    }

    pub fn from_vec(grid: Grid2D, values: Vec<f32>, units: Units) -> Result<Self> {
        let arr = Array2::from_shape_vec(grid.shape(), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Field::new(grid, arr, units)
    }

    pub fn from_fn(grid: Grid2D, units: Units, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        Field::new(
            grid,
            Array2::from_shape_fn(grid.shape(), |(r, c)| f(r, c)),
            units,
        )
    }

    pub fn constant(grid: Grid2D, value: f32, units: Units) -> Result<Self> {
        Field::new(grid, Array2::from_elem(grid.shape(), value), units)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[[row, col]]
    }

    /// Row-major view of the values.
    pub fn as_slice(&self) -> &[f32] {
        self.values
            .as_slice()
            .expect("field values are always standard layout")
    }

    pub fn into_vec(self) -> Vec<f32> {
        let (v, offset) = self.values.into_raw_vec_and_offset();
        debug_assert!(matches!(offset, None | Some(0)));
        v
    }

    /// Same grid and values, relabelled units.
    pub fn with_units(mut self, units: Units) -> Self {
        self.units = units;
        self
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Field> {
        Field::new(self.grid, self.values.mapv(f), self.units)
    }

    pub fn max(&self) -> f32 {
        self.values
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }
}

/// An ordered, uniformly stepped sequence of fields on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSeries {
    t0: DateTime<Utc>,
    step_hours: u32,
    frames: Vec<Field>,
}

impl FieldSeries {
    pub fn new(t0: DateTime<Utc>, step_hours: u32, frames: Vec<Field>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Parameter(
                "field series needs at least one frame".into(),
            ));
        }
        if step_hours == 0 {
            return Err(Error::Parameter("series step must be positive".into()));
        }
        let grid = *frames[0].grid();
        let units = frames[0].units();
        for (i, f) in frames.iter().enumerate() {
            if !f.grid().same_as(&grid) {
                return Err(Error::Extent(format!("frame {i} is on a different grid")));
            }
            if f.units() != units {
                return Err(Error::Parameter(format!("frame {i} has different units")));
            }
        }
        Ok(FieldSeries {
            t0,
            step_hours,
            frames,
        })
    }

    pub fn t0(&self) -> DateTime<Utc> {
        self.t0
    }

    pub fn step_hours(&self) -> u32 {
        self.step_hours
    }

    pub fn frames(&self) -> &[Field] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Field> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn grid(&self) -> &Grid2D {
        self.frames[0].grid()
    }

    pub fn units(&self) -> Units {
        self.frames[0].units()
    }

    pub fn time_at(&self, index: usize) -> DateTime<Utc> {
        self.t0 + Duration::hours(self.step_hours as i64 * index as i64)
    }

    pub fn times(&self) -> impl Iterator<Item = DateTime<Utc>> + '_ {
        (0..self.len()).map(|i| self.time_at(i))
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.time_at(self.len() - 1)
    }

    /// Frame index holding timestamp `t`, if any.
    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        index_in(self.t0, self.step_hours, self.len(), t)
    }

    pub fn frame_at(&self, t: DateTime<Utc>) -> Option<&Field> {
        self.index_of(t).map(|i| &self.frames[i])
    }
}

pub(crate) fn index_in(
    t0: DateTime<Utc>,
    step_hours: u32,
    len: usize,
    t: DateTime<Utc>,
) -> Option<usize> {
    let dt = (t - t0).num_seconds();
    let step = step_hours as i64 * 3600;
    if dt < 0 || dt % step != 0 {
        return None;
    }
    let idx = (dt / step) as usize;
    (idx < len).then_some(idx)
}

/// Blur kernel, decimation factor and additive noise of the synthetic
/// degradation `y = (x * k) decimated by s + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationParams {
    kernel: Array2<f64>,
    scale: usize,
    noise_sigma: f64,
}

impl DegradationParams {
    pub fn new(kernel: Array2<f64>, scale: usize, noise_sigma: f64) -> Result<Self> {
        let (kr, kc) = kernel.dim();
        if kr != kc || kr % 2 == 0 {
            return Err(Error::Kernel(format!(
                "kernel must be square and odd, got {kr}x{kc}"
            )));
        }
        if kernel.iter().any(|v| !v.is_finite()) {
            return Err(Error::Kernel("kernel has non-finite entries".into()));
        }
        let sum: f64 = kernel.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Kernel(format!(
                "kernel must sum to 1, sums to {sum}"
            )));
        }
        if scale == 0 {
            return Err(Error::Parameter("decimation scale must be positive".into()));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::Parameter(format!(
                "noise sigma must be >= 0, got {noise_sigma}"
            )));
        }
        Ok(DegradationParams {
            kernel,
            scale,
            noise_sigma,
        })
    }

    /// Normalized Gaussian kernel of radius `ceil(3 sigma)`; `sigma = 0`
    /// gives the 1x1 identity kernel.
    pub fn gaussian(sigma: f64, scale: usize, noise_sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Kernel(format!(
                "gaussian sigma must be >= 0, got {sigma}"
            )));
        }
        if sigma == 0.0 {
            return Self::identity(scale, noise_sigma);
        }
        let radius = (3.0 * sigma).ceil() as usize;
        let size = 2 * radius + 1;
        let mut k = Array2::from_shape_fn((size, size), |(r, c)| {
            let dy = r as f64 - radius as f64;
            let dx = c as f64 - radius as f64;
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        });
        let s = k.sum();
        k.mapv_inplace(|v| v / s);
        Self::new(k, scale, noise_sigma)
    }

    pub fn identity(scale: usize, noise_sigma: f64) -> Result<Self> {
        Self::new(Array2::from_elem((1, 1), 1.0), scale, noise_sigma)
    }

    pub fn kernel(&self) -> &Array2<f64> {
        &self.kernel
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn radius(&self) -> usize {
        self.kernel.nrows() / 2
    }

    /// Output shape for an input of `rows x cols`.
    pub fn output_shape(&self, rows: usize, cols: usize) -> (usize, usize) {
        ((rows - 1) / self.scale + 1, (cols - 1) / self.scale + 1)
    }
}

fn check_extent(source: &Grid2D, target: &Grid2D) -> Result<()> {
    // The target may overhang the source by less than one source cell: a
    // decimated grid keeps the anchor corner and loses up to scale-1 fine
    // cells at the far edges, which resampling fills by clamping.
    let (s, t) = (source.geobox(), target.geobox());
    let tol_lat = source.dlat() + EXTENT_EPS;
    let tol_lon = source.dlon() + EXTENT_EPS;
    let inside = t.north <= s.north + tol_lat
        && t.south >= s.south - tol_lat
        && t.east <= s.east + tol_lon
        && t.west >= s.west - tol_lon;
    let overlaps_fully = t.north >= s.north - tol_lat
        && t.south <= s.south + tol_lat
        && t.east >= s.east - tol_lon
        && t.west <= s.west + tol_lon;
    if inside && overlaps_fully {
        Ok(())
    } else {
        Err(Error::Extent(format!(
            "source extent {s:?} and target extent {t:?} differ by more than one source cell"
        )))
    }
}

/// Interpolation weights from a clamped fractional index.
fn lerp_index(frac: f64, len: usize) -> (usize, usize, f64) {
    let f = frac.clamp(0.0, (len - 1) as f64);
    let i0 = f.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, f - i0 as f64)
}

/// Bilinear interpolation of cell-centre samples onto `target`.
///
/// Works for any (including non-integer) resolution ratio. Target points
/// outside the source centres are clamped to the border.
pub fn bilinear_resample(field: &Field, target: &Grid2D) -> Result<Field> {
    let src = field.grid();
    check_extent(src, target)?;
    let (rows, cols) = src.shape();
    let vals = field.as_slice();
    let col_w: Vec<(usize, usize, f64)> = (0..target.cols())
        .map(|c| lerp_index(src.fractional_index(src.lat(0), target.lon(c)).1, cols))
        .collect();
    let row_vals = Exec::current().map_range(target.rows(), |r| {
        let (r0, r1, tr) = lerp_index(src.fractional_index(target.lat(r), src.lon(0)).0, rows);
        col_w
            .iter()
            .map(|&(c0, c1, tc)| {
                let v00 = vals[r0 * cols + c0] as f64;
                let v01 = vals[r0 * cols + c1] as f64;
                let v10 = vals[r1 * cols + c0] as f64;
                let v11 = vals[r1 * cols + c1] as f64;
                let top = v00 + (v01 - v00) * tc;
                let bottom = v10 + (v11 - v10) * tc;
                (top + (bottom - top) * tr) as f32
            })
            .collect::<Vec<f32>>()
    });
    Field::from_vec(*target, row_vals.concat(), field.units())
}

/// Blur with the kernel (edge-replicated), decimate by `scale` anchored at
/// cell (0, 0), then add seeded Gaussian noise.
pub fn degrade(hr: &Field, params: &DegradationParams, seed: u64) -> Result<Field> {
    let (rows, cols) = hr.grid().shape();
    let ksize = params.kernel.nrows();
    if ksize > rows || ksize > cols {
        return Err(Error::Kernel(format!(
            "{ksize}x{ksize} kernel is larger than the {rows}x{cols} field"
        )));
    }
    let (out_rows, out_cols) = params.output_shape(rows, cols);
    if out_rows < 2 || out_cols < 2 {
        return Err(Error::Parameter(format!(
            "scale {} leaves fewer than 2x2 samples from {rows}x{cols}",
            params.scale
        )));
    }
    let grid = hr.grid();
    let geobox = GeoBox::new(
        grid.geobox().north,
        grid.geobox().north - ((out_rows - 1) * params.scale) as f64 * grid.dlat(),
        grid.geobox().west + ((out_cols - 1) * params.scale) as f64 * grid.dlon(),
        grid.geobox().west,
    )?;
    let out_grid = Grid2D::new(out_rows, out_cols, geobox)?;

    let radius = params.radius() as isize;
    let vals = hr.as_slice();
    let kernel = &params.kernel;
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for orow in 0..out_rows {
        for ocol in 0..out_cols {
            let (r, c) = (
                (orow * params.scale) as isize,
                (ocol * params.scale) as isize,
            );
            let mut acc = 0.0f64;
            for kr in 0..ksize as isize {
                let sr = (r + kr - radius).clamp(0, rows as isize - 1) as usize;
                for kc in 0..ksize as isize {
                    let sc = (c + kc - radius).clamp(0, cols as isize - 1) as usize;
                    acc += kernel[[kr as usize, kc as usize]] * vals[sr * cols + sc] as f64;
                }
            }
            out.push(acc);
        }
    }
    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += params.noise_sigma * z;
        }
    }
    Field::from_vec(
        out_grid,
        out.into_iter().map(|v| v as f32).collect(),
        hr.units(),
    )
}

/// Wind speed `sqrt(u^2 + v^2)` from zonal and meridional components.
pub fn wind_speed(u: &Field, v: &Field) -> Result<Field> {
    if !u.grid().same_as(v.grid()) {
        return Err(Error::Extent(
            "u and v components are on different grids".into(),
        ));
    }
    if u.units() != Units::MetersPerSecond || v.units() != Units::MetersPerSecond {
        return Err(Error::Parameter("wind components must be in m/s".into()));
    }
    let speed = ndarray::Zip::from(u.values())
        .and(v.values())
        .map_collect(|&a, &b| (a as f64).hypot(b as f64) as f32);
    Field::new(*u.grid(), speed, Units::MetersPerSecond)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extraction {
    /// Nearest cell centre; ties go to the lower row, then the lower column.
    #[default]
    Nearest,
    Bilinear,
}

/// Value of `field` at a point inside its extent.
pub fn extract_gridpoint(field: &Field, lat: f64, lon: f64, method: Extraction) -> Result<f32> {
    let grid = field.grid();
    if !grid.geobox().contains(lat, lon) {
        return Err(Error::Extent(format!(
            "point ({lat}, {lon}) lies outside {:?}",
            grid.geobox()
        )));
    }
    let (fr, fc) = grid.fractional_index(lat, lon);
    match method {
        Extraction::Nearest => {
            let round_half_down =
                |f: f64, len: usize| ((f - 0.5).ceil().max(0.0) as usize).min(len - 1);
            Ok(field.get(
                round_half_down(fr, grid.rows()),
                round_half_down(fc, grid.cols()),
            ))
        }
        Extraction::Bilinear => {
            let (r0, r1, tr) = lerp_index(fr, grid.rows());
            let (c0, c1, tc) = lerp_index(fc, grid.cols());
            let g = |r, c| field.get(r, c) as f64;
            let top = g(r0, c0) + (g(r0, c1) - g(r0, c0)) * tc;
            let bottom = g(r1, c0) + (g(r1, c1) - g(r1, c0)) * tc;
            Ok((top + (bottom - top) * tr) as f32)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_box(n: f64) -> GeoBox {
        GeoBox::new(n, 0.0, n, 0.0).unwrap()
    }

    fn grid(rows: usize, cols: usize) -> Grid2D {
        Grid2D::new(rows, cols, GeoBox::study_area()).unwrap()
    }

    #[test]
    fn geobox_rejects_inverted_extent() {
        assert!(GeoBox::new(1.0, 2.0, 3.0, 0.0).is_err());
        assert!(GeoBox::new(2.0, 1.0, 0.0, 3.0).is_err());
        assert!(GeoBox::new(f64::NAN, 1.0, 3.0, 0.0).is_err());
        assert!(Grid2D::new(1, 5, GeoBox::study_area()).is_err());
    }

    #[test]
    fn grid_spacing() {
        let g = Grid2D::new(4, 5, GeoBox::new(3.0, 0.0, 8.0, 0.0).unwrap()).unwrap();
        assert_eq!(g.dlat(), 1.0);
        assert_eq!(g.dlon(), 2.0);
        assert_eq!(g.lat(0), 3.0);
        assert_eq!(g.lat(3), 0.0);
        assert_eq!(g.lon(4), 8.0);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let f = Field::constant(grid(52, 52), 3.25, Units::MetersPerSecond).unwrap();
        let out = bilinear_resample(&f, &grid(256, 256)).unwrap();
        assert_eq!(out.grid().shape(), (256, 256));
        assert!(out.values().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn resample_midpoint_of_2x2() {
        let b = unit_box(1.0);
        let f = Field::from_vec(
            Grid2D::new(2, 2, b).unwrap(),
            vec![0.0, 1.0, 2.0, 3.0],
            Units::Normalized,
        )
        .unwrap();
        let out = bilinear_resample(&f, &Grid2D::new(3, 3, b).unwrap()).unwrap();
        assert_abs_diff_eq!(out.get(1, 1), 1.5, epsilon = 1e-7);
        assert_abs_diff_eq!(out.get(0, 1), 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(out.get(2, 2), 3.0, epsilon = 1e-7);
    }

    #[test]
    fn resample_rejects_other_extent() {
        let f = Field::constant(grid(8, 8), 1.0, Units::Normalized).unwrap();
        let other = Grid2D::new(8, 8, GeoBox::new(10.0, 0.0, 10.0, 0.0).unwrap()).unwrap();
        assert!(matches!(
            bilinear_resample(&f, &other),
            Err(Error::Extent(_))
        ));
    }

    #[test]
    fn resample_exact_on_affine_fields() {
        let src = grid(13, 17);
        let dst = grid(64, 50);
        let affine = |lat: f64, lon: f64| 0.3 * lat - 0.7 * lon + 2.0;
        let f = Field::from_fn(src, Units::MetersPerSecond, |r, c| {
            affine(src.lat(r), src.lon(c)) as f32
        })
        .unwrap();
        let out = bilinear_resample(&f, &dst).unwrap();
        for r in 0..dst.rows() {
            for c in 0..dst.cols() {
                let expect = affine(dst.lat(r), dst.lon(c));
                assert!((out.get(r, c) as f64 - expect).abs() <= 1e-5, "({r},{c})");
            }
        }
    }

    #[test]
    fn degrade_identity() {
        let g = grid(6, 7);
        let f = Field::from_fn(g, Units::MetersPerSecond, |r, c| (r * 7 + c) as f32 * 0.5).unwrap();
        let p = DegradationParams::identity(1, 0.0).unwrap();
        let out = degrade(&f, &p, 99).unwrap();
        assert_eq!(out.values(), f.values());
        assert!(out.grid().same_as(f.grid()));
        let back = bilinear_resample(&out, f.grid()).unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn degrade_decimation_matches_striding_oracle() {
        let g = grid(5, 5);
        let f = Field::from_fn(g, Units::MetersPerSecond, |r, c| (10 * r + c) as f32).unwrap();
        let p = DegradationParams::identity(2, 0.0).unwrap();
        let out = degrade(&f, &p, 0).unwrap();
        assert_eq!(out.grid().shape(), (3, 3));
        // Independent oracle: explicit index striding.
        let mut expect = Vec::new();
        let mut r = 0;
        while r < 5 {
            let mut c = 0;
            while c < 5 {
                expect.push(f.get(r, c));
                c += 2;
            }
            r += 2;
        }
        assert_eq!(out.as_slice(), &expect[..]);
        // Decimated grid keeps the north-west anchor and the original spacing x2.
        assert_abs_diff_eq!(out.grid().dlat(), 2.0 * g.dlat(), epsilon = 1e-12);
        assert_abs_diff_eq!(out.grid().lon(0), g.lon(0), epsilon = 1e-12);
    }

    #[test]
    fn degrade_box_blur_of_checkerboard() {
        // A 3x3 box covers 4 or 5 ones of a period-2 checkerboard.
        let g = grid(8, 8);
        let f = Field::from_fn(g, Units::Normalized, |r, c| ((r + c) % 2) as f32).unwrap();
        let k = Array2::from_elem((3, 3), 1.0 / 9.0);
        let out = degrade(&f, &DegradationParams::new(k, 1, 0.0).unwrap(), 0).unwrap();
        for r in 1..7 {
            for c in 1..7 {
                let expect = if (r + c) % 2 == 0 {
                    4.0 / 9.0
                } else {
                    5.0 / 9.0
                };
                assert_abs_diff_eq!(out.get(r, c), expect, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn degrade_period_covering_kernel_on_checkerboard_is_half() {
        // Uniform weight over one full 2x2 period averages to exactly 0.5.
        let g = grid(8, 8);
        let f = Field::from_fn(g, Units::Normalized, |r, c| ((r + c) % 2) as f32).unwrap();
        let k = Array2::from_shape_vec(
            (3, 3),
            vec![0.25, 0.25, 0.0, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let out = degrade(&f, &DegradationParams::new(k, 1, 0.0).unwrap(), 0).unwrap();
        for r in 1..7 {
            for c in 1..7 {
                assert_abs_diff_eq!(out.get(r, c), 0.5, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn degrade_kernel_larger_than_field() {
        let f = Field::constant(grid(4, 4), 1.0, Units::Normalized).unwrap();
        let p = DegradationParams::gaussian(1.0, 1, 0.0).unwrap();
        assert!(matches!(degrade(&f, &p, 0), Err(Error::Kernel(_))));
    }

    #[test]
    fn degradation_params_validation() {
        assert!(DegradationParams::new(Array2::from_elem((2, 2), 0.25), 1, 0.0).is_err());
        assert!(DegradationParams::new(Array2::from_elem((3, 3), 0.2), 1, 0.0).is_err());
        assert!(DegradationParams::identity(0, 0.0).is_err());
        assert!(DegradationParams::identity(1, -1.0).is_err());
        let g = DegradationParams::gaussian(1.0, 4, 0.02).unwrap();
        assert_eq!(g.kernel().dim(), (7, 7));
        assert_abs_diff_eq!(g.kernel().sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degrade_noise_is_seeded() {
        let f = Field::constant(grid(16, 16), 5.0, Units::MetersPerSecond).unwrap();
        let noisy = DegradationParams::gaussian(1.0, 2, 0.1).unwrap();
        let a = degrade(&f, &noisy, 7).unwrap();
        let b = degrade(&f, &noisy, 7).unwrap();
        let c = degrade(&f, &noisy, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let clean = DegradationParams::gaussian(1.0, 2, 0.0).unwrap();
        assert_eq!(
            degrade(&f, &clean, 1).unwrap(),
            degrade(&f, &clean, 2).unwrap()
        );
    }

    #[test]
    fn wind_speed_cases() {
        let g = grid(4, 4);
        let u = Field::constant(g, 3.0, Units::MetersPerSecond).unwrap();
        let v = Field::constant(g, 4.0, Units::MetersPerSecond).unwrap();
        assert!(wind_speed(&u, &v)
            .unwrap()
            .values()
            .iter()
            .all(|&s| s == 5.0));
        let z = Field::constant(g, 0.0, Units::MetersPerSecond).unwrap();
        assert!(wind_speed(&z, &z)
            .unwrap()
            .values()
            .iter()
            .all(|&s| s == 0.0));
        let other = Field::constant(grid(5, 4), 0.0, Units::MetersPerSecond).unwrap();
        assert!(matches!(wind_speed(&u, &other), Err(Error::Extent(_))));
    }

    #[test]
    fn wind_speed_matches_scalar_loop() {
        let g = grid(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let uv: Vec<f32> = (0..16).map(|_| rng.random_range(-20.0..20.0)).collect();
        let vv: Vec<f32> = (0..16).map(|_| rng.random_range(-20.0..20.0)).collect();
        let u = Field::from_vec(g, uv.clone(), Units::MetersPerSecond).unwrap();
        let v = Field::from_vec(g, vv.clone(), Units::MetersPerSecond).unwrap();
        let s = wind_speed(&u, &v).unwrap();
        for i in 0..16 {
            let expect = ((uv[i] * uv[i] + vv[i] * vv[i]) as f64).sqrt();
            assert!((s.as_slice()[i] as f64 - expect).abs() <= 1e-6 * expect.max(1.0));
        }
    }

    #[test]
    fn extract_on_centre_and_tie() {
        let g = Grid2D::new(4, 4, GeoBox::new(3.0, 0.0, 3.0, 0.0).unwrap()).unwrap();
        let f = Field::from_fn(g, Units::MetersPerSecond, |r, c| (r * 4 + c) as f32).unwrap();
        assert_eq!(
            extract_gridpoint(&f, 2.0, 1.0, Extraction::Nearest).unwrap(),
            5.0
        );
        // Midway between rows 1 and 2 → row 1; midway between cols 2 and 3 → col 2.
        assert_eq!(
            extract_gridpoint(&f, 1.5, 2.5, Extraction::Nearest).unwrap(),
            6.0
        );
        assert!(matches!(
            extract_gridpoint(&f, 3.5, 1.0, Extraction::Nearest),
            Err(Error::Extent(_))
        ));
        assert_abs_diff_eq!(
            extract_gridpoint(&f, 1.5, 2.5, Extraction::Bilinear).unwrap(),
            8.5,
            epsilon = 1e-6
        );
    }

    #[test]
    fn extract_matches_brute_force_scan() {
        let g = Grid2D::new(4, 4, GeoBox::new(40.0, 37.0, 12.0, 9.0).unwrap()).unwrap();
        let f = Field::from_fn(g, Units::MetersPerSecond, |r, c| {
            (r as f32) * 1.5 + c as f32
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let lat = rng.random_range(37.0..40.0);
            let lon = rng.random_range(9.0..12.0);
            let mut best = (f64::INFINITY, 0.0f32);
            for r in 0..4 {
                for c in 0..4 {
                    let d = (g.lat(r) - lat).powi(2) + (g.lon(c) - lon).powi(2);
                    if d < best.0 {
                        best = (d, f.get(r, c));
                    }
                }
            }
            assert_eq!(
                extract_gridpoint(&f, lat, lon, Extraction::Nearest).unwrap(),
                best.1
            );
        }
    }

    proptest! {
        #[test]
        fn wind_speed_non_negative(u in prop::collection::vec(-50.0f32..50.0, 9),
                                   v in prop::collection::vec(-50.0f32..50.0, 9)) {
            let g = grid(3, 3);
            let s = wind_speed(
                &Field::from_vec(g, u, Units::MetersPerSecond).unwrap(),
                &Field::from_vec(g, v, Units::MetersPerSecond).unwrap(),
            ).unwrap();
            prop_assert!(s.values().iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn resample_affine_any_ratio(rows in 2usize..20, cols in 2usize..20,
                                     trows in 2usize..40, tcols in 2usize..40,
                                     a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let src = grid(rows, cols);
            let dst = grid(trows, tcols);
            let f = Field::from_fn(src, Units::MetersPerSecond, |r, c| {
                (a * (src.lat(r) - 40.0) + b * (src.lon(c) - 12.0)) as f32
            }).unwrap();
            let out = bilinear_resample(&f, &dst).unwrap();
            for r in 0..trows {
                for c in 0..tcols {
                    let e = a * (dst.lat(r) - 40.0) + b * (dst.lon(c) - 12.0);
                    prop_assert!((out.get(r, c) as f64 - e).abs() <= 1e-5);
                }
            }
        }
    }
}
