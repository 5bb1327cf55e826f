//! Regression baselines and their training loop, plus plain bilinear
//! upsampling.
//!
//! The residual U-Net reads the upsampled conditioning stack. The
//! post-upsampling nets read the native low-resolution frames; when the
//! resolution ratio is not an integer, those frames are first resampled to
//! the grid that an integer factor maps onto the target size and the net
//! output is resampled onto the target grid afterwards.

use crate::datapipe::Batch;
use crate::diffusion::TrainConfig;
use crate::error::{Error, Result};
use crate::grids::{bilinear_resample, Field, Grid2D, Units};
use crate::models::{AdamW, AdamWConfig, Model, ModelSpec, PredictorKind, Tensor, T0_CHANNEL};

/// Resamples every plane of `t` from `from` onto `to`.
pub fn resample_tensor(t: &Tensor<f32>, from: &Grid2D, to: &Grid2D) -> Result<Tensor<f32>> {
    let [n, c, h, w] = t.shape();
    if (h, w) != from.shape() {
        return Err(Error::Shape(format!(
            "tensor is {h}x{w}, grid is {:?}",
            from.shape()
        )));
    }
    let mut out = Vec::with_capacity(n * c * to.len());
    for i in 0..n {
        for ch in 0..c {
            let f = Field::from_vec(*from, t.plane(i, ch).to_vec(), Units::Normalized)?;
            out.extend(bilinear_resample(&f, to)?.into_vec());
        }
    }
    Tensor::from_vec([n, c, to.rows(), to.cols()], out)
}

/// Bilinear baseline: the upsampled `t0` frame rescaled from low-res to
/// high-res normalisation (`lr_to_hr = lr_norm_max / hr_norm_max`).
pub fn bilinear_predict(cond: &Tensor<f32>, lr_to_hr: f64) -> Result<Tensor<f32>> {
    let [n, c, h, w] = cond.shape();
    if c <= T0_CHANNEL {
        return Err(Error::Shape(format!("conditioning has {c} channels")));
    }
    let mut out = Vec::with_capacity(n * h * w);
    for i in 0..n {
        out.extend(
            cond.plane(i, T0_CHANNEL)
                .iter()
                .map(|&v| (v as f64 * lr_to_hr) as f32),
        );
    }
    Tensor::from_vec([n, 1, h, w], out)
}

/// Grids on which a post-upsampling net runs for a given data geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpscalePlan {
    pub lr: Grid2D,
    pub hr: Grid2D,
    /// Grid the net reads (the native low-res grid when the factor is exact).
    pub net_in: Grid2D,
    /// Grid the net writes (the target grid when the factor is exact).
    pub net_out: Grid2D,
}

impl UpscalePlan {
    pub fn new(lr: Grid2D, hr: Grid2D, upscale: usize) -> Result<Self> {
        if upscale == 0 {
            return Err(Error::Config("upscale factor must be positive".into()));
        }
        let (rows, cols) = hr.shape();
        if lr.rows() * upscale == rows && lr.cols() * upscale == cols {
            return Ok(UpscalePlan {
                lr,
                hr,
                net_in: lr,
                net_out: hr,
            });
        }
        let in_rows = ((rows as f64 / upscale as f64).round() as usize).max(2);
        let in_cols = ((cols as f64 / upscale as f64).round() as usize).max(2);
        Ok(UpscalePlan {
            lr,
            hr,
            net_in: Grid2D::new(in_rows, in_cols, *lr.geobox())?,
            net_out: Grid2D::new(in_rows * upscale, in_cols * upscale, *hr.geobox())?,
        })
    }

    pub fn is_exact(&self) -> bool {
        self.net_in.same_as(&self.lr) && self.net_out.same_as(&self.hr)
    }

    /// Integer factor closest to the resolution ratio.
    pub fn nearest_factor(lr: &Grid2D, hr: &Grid2D) -> usize {
        ((hr.rows() as f64 / lr.rows() as f64).round() as usize).max(1)
    }
}

/// A trainable regression baseline.
pub struct Regressor {
    model: Model<f32>,
    plan: Option<UpscalePlan>,
    opt: AdamW,
    cfg: TrainConfig,
    epoch: usize,
    step: usize,
}

impl Regressor {
    /// `lr` and `hr` are the data grids; they fix the upscale plan of the
    /// post-upsampling nets.
    pub fn new(spec: &ModelSpec, lr: Grid2D, hr: Grid2D, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let plan = match spec.kind() {
            PredictorKind::Runet => None,
            PredictorKind::Espcn | PredictorKind::Edsr => {
                Some(UpscalePlan::new(lr, hr, spec.upscale().unwrap_or(1))?)
            }
            other => {
                return Err(Error::Config(format!(
                    "{} is not a regression baseline",
                    other.name()
                )))
            }
        };
        Ok(Regressor {
            model: Model::new(spec, cfg.seed)?,
            plan,
            opt: AdamW::new(AdamWConfig::default()),
            cfg,
            epoch: 0,
            step: 0,
        })
    }

    pub fn from_model(model: Model<f32>, lr: Grid2D, hr: Grid2D, cfg: TrainConfig) -> Result<Self> {
        let mut r = Regressor::new(&model.spec(), lr, hr, cfg)?;
        r.model = model;
        Ok(r)
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn plan(&self) -> Option<&UpscalePlan> {
        self.plan.as_ref()
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    fn input(&self, batch: &Batch) -> Result<Tensor<f32>> {
        match &self.plan {
            None => Ok(batch.cond.clone()),
            Some(p) if p.net_in.same_as(&p.lr) => Ok(batch.lr.clone()),
            Some(p) => resample_tensor(&batch.lr, &p.lr, &p.net_in),
        }
    }

    fn train_target(&self, batch: &Batch) -> Result<Tensor<f32>> {
        match &self.plan {
            Some(p) if !p.net_out.same_as(&p.hr) => {
                resample_tensor(&batch.target, &p.hr, &p.net_out)
            }
            _ => Ok(batch.target.clone()),
        }
    }

    /// One optimiser update; the loss compares the net output with the
    /// target (on the net's output grid).
    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        let x = self.input(batch)?;
        let target = self.train_target(batch)?;
        self.model.zero_grad();
        let (y, cache) = self.model.forward_train(&x)?;
        let (loss, grad) = self.cfg.loss.eval(&y, &target)?;
        self.step += 1;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                loss,
            });
        }
        self.model.backward(cache, &grad);
        let (lr, wd) = (self.cfg.lr_at(self.epoch), self.cfg.wd_at(self.epoch));
        self.opt.step(&mut self.model.params_mut(), lr, wd);
        Ok(loss)
    }

    /// `[n, 1, H, W]` prediction on the target grid.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor<f32>> {
        let y = self.model.forward(&self.input(batch)?)?;
        match &self.plan {
            Some(p) if !p.net_out.same_as(&p.hr) => resample_tensor(&y, &p.net_out, &p.hr),
            _ => Ok(y),
        }
    }
}
