//! Seeded pseudo-weather: drifting Gaussian wind maxima over a smooth
//! background, degraded to low resolution with [`degrade`].

use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fit_norm_max;
use super::store::{DatasetStore, Role};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grids::{degrade, DegradationParams, Field, FieldSeries, GeoBox, Grid2D, Units};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(rename = "type")]
    pub kind: String,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub hr_rows: usize,
    pub hr_cols: usize,
    /// Training frames.
    pub frames: usize,
    pub kernel: KernelSpec,
    pub scale: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Frames of a held-out continuation written as separate test stores.
    #[serde(default)]
    pub test_frames: usize,
    #[serde(default = "GeoBox::study_area")]
    pub geobox: GeoBox,
    #[serde(default = "default_t0")]
    pub t0: DateTime<Utc>,
    /// Number of wind maxima; defaults to one per 400 high-res cells (min 4).
    #[serde(default)]
    pub bumps: Option<usize>,
    /// Range of the maxima's Gaussian widths, in high-res cells of a 64-cell grid.
    #[serde(default = "default_bump_width")]
    pub bump_width: [f64; 2],
}

fn default_bump_width() -> [f64; 2] {
    [2.5, 6.0]
}

fn default_t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2010, 1, 1, 0, 0, 0)
        .single()
        .expect("valid date")
}

impl SynthConfig {
    /// Desk-scale dataset used by the end-to-end checks.
    pub fn desk(frames: usize, test_frames: usize, seed: u64) -> Self {
        SynthConfig {
            hr_rows: 64,
            hr_cols: 64,
            frames,
            kernel: KernelSpec {
                kind: "gaussian".into(),
                sigma: 1.0,
            },
            scale: 4,
            noise_sigma: 0.02,
            seed,
            test_frames,
            geobox: GeoBox::study_area(),
            t0: default_t0(),
            bumps: None,
            bump_width: default_bump_width(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hr_rows < 2 || self.hr_cols < 2 || self.frames == 0 {
            return Err(Error::Parameter(
                "need hr grid >= 2x2 and at least one frame".into(),
            ));
        }
        if self.kernel.kind != "gaussian" {
            return Err(Error::Parameter(format!(
                "unsupported kernel type {:?}",
                self.kernel.kind
            )));
        }
        self.geobox.validate()?;
        self.degradation().map(|_| ())
    }

    pub fn degradation(&self) -> Result<DegradationParams> {
        DegradationParams::gaussian(self.kernel.sigma, self.scale, self.noise_sigma)
    }

    pub fn hr_grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.hr_rows, self.hr_cols, self.geobox)
    }

    /// Seed of the degradation noise for absolute frame `index`
    /// (training frames first, then test frames).
    pub fn frame_seed(&self, index: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index as u64 + 1)
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub train_lr: DatasetStore,
    pub train_hr: DatasetStore,
    pub test_lr: Option<DatasetStore>,
    pub test_hr: Option<DatasetStore>,
}

struct Bump {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    width: f64,
    amp: f64,
    omega: f64,
    phase: f64,
}

struct Weather {
    bumps: Vec<Bump>,
    background: f64,
    gx: f64,
    gy: f64,
    rows: usize,
    cols: usize,
}

impl Weather {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (rows, cols) = (cfg.hr_rows as f64, cfg.hr_cols as f64);
        let px = rows.min(cols) / 64.0;
        let count = cfg
            .bumps
            .unwrap_or_else(|| (cfg.hr_rows * cfg.hr_cols / 400).max(4));
        let bumps = (0..count)
            .map(|_| Bump {
                x: rng.random_range(0.0..cols),
                y: rng.random_range(0.0..rows),
                vx: rng.random_range(-1.5..1.5) * px,
                vy: rng.random_range(-1.5..1.5) * px,
                width: rng.random_range(cfg.bump_width[0]..cfg.bump_width[1]) * px,
                amp: rng.random_range(3.0..12.0),
                omega: rng.random_range(0.02..0.2),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        Weather {
            bumps,
            background: rng.random_range(2.0..4.0),
            gx: rng.random_range(-1.0..1.0),
            gy: rng.random_range(-1.0..1.0),
            rows: cfg.hr_rows,
            cols: cfg.hr_cols,
        }
    }

    /// Position wrapped into a margin-extended domain so maxima leave one
    /// edge smoothly and re-enter at the opposite one.
    fn wrap(p: f64, len: usize, margin: f64) -> f64 {
        let span = len as f64 + 2.0 * margin;
        (p + margin).rem_euclid(span) - margin
    }

    fn frame(&self, t: usize, grid: Grid2D) -> Result<Field> {
        let t = t as f64;
        let centres: Vec<(f64, f64, f64, f64)> = self
            .bumps
            .iter()
            .map(|b| {
                let m = 3.0 * b.width;
                let x = Self::wrap(b.x + b.vx * t, self.cols, m);
                let y = Self::wrap(b.y + b.vy * t, self.rows, m);
                let amp = b.amp * (0.75 + 0.25 * (b.omega * t + b.phase).sin());
                (x, y, b.width, amp)
            })
            .collect();
        let (rows, cols) = (self.rows as f64, self.cols as f64);
        Field::from_fn(grid, Units::MetersPerSecond, |r, c| {
            let (rf, cf) = (r as f64, c as f64);
            let mut v = self.background + self.gx * cf / cols + self.gy * rf / rows;
            for &(x, y, w, a) in &centres {
                let d2 = (rf - y).powi(2) + (cf - x).powi(2);
                v += a * (-d2 / (2.0 * w * w)).exp();
            }
            v as f32
        })
    }
}

fn series(
    cfg: &SynthConfig,
    weather: &Weather,
    start: usize,
    count: usize,
) -> Result<(FieldSeries, FieldSeries)> {
    let grid = cfg.hr_grid()?;
    let params = cfg.degradation()?;
    let indices: Vec<usize> = (start..start + count).collect();
    let pairs = Exec::current().map(&indices, |&i| -> Result<(Field, Field)> {
        let hr = weather.frame(i, grid)?;
        let lr = degrade(&hr, &params, cfg.frame_seed(i))?;
        Ok((hr, lr))
    });
    let (mut hr, mut lr) = (Vec::with_capacity(count), Vec::with_capacity(count));
    for p in pairs {
        let (h, l) = p?;
        hr.push(h);
        lr.push(l);
    }
    let t0 = cfg.t0 + Duration::hours(3 * start as i64);
    Ok((FieldSeries::new(t0, 3, lr)?, FieldSeries::new(t0, 3, hr)?))
}

/// Generates the training stores (and optional test stores) under `dir`.
/// Stores keep m/s values; each records the maximum of its own training
/// split as `norm_max`, and test stores reuse the training maxima.
pub fn synth_generate(cfg: &SynthConfig, dir: &Path) -> Result<SynthOutput> {
    cfg.validate()?;
    let weather = Weather::new(cfg);
    let (lr, hr) = series(cfg, &weather, 0, cfg.frames)?;
    let lr_max = fit_norm_max(&lr)?;
    let hr_max = fit_norm_max(&hr)?;
    let train_lr =
        DatasetStore::create(dir.join("train_lr"), &lr, Some(Role::LowRes), Some(lr_max))?;
    let train_hr =
        DatasetStore::create(dir.join("train_hr"), &hr, Some(Role::HighRes), Some(hr_max))?;
    let (test_lr, test_hr) = if cfg.test_frames > 0 {
        let (lr, hr) = series(cfg, &weather, cfg.frames, cfg.test_frames)?;
        (
            Some(DatasetStore::create(
                dir.join("test_lr"),
                &lr,
                Some(Role::LowRes),
                Some(lr_max),
            )?),
            Some(DatasetStore::create(
                dir.join("test_hr"),
                &hr,
                Some(Role::HighRes),
                Some(hr_max),
            )?),
        )
    } else {
        (None, None)
    };
    Ok(SynthOutput {
        train_lr,
        train_hr,
        test_lr,
        test_hr,
    })
}
