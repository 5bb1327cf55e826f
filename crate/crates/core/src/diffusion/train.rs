use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{schedule_linear, DiffusionNet, NoiseSchedule, ALPHA_FLOOR};
use crate::error::{Error, Result};
use crate::models::{linear_decay, AdamW, AdamWConfig, Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean absolute error.
    #[default]
    Mae,
    /// Mean squared error.
    Squared,
}

impl LossKind {
    /// Loss value and its gradient w.r.t. the prediction, both averaged over
    /// all elements.
    pub fn eval<S: Scalar>(self, pred: &Tensor<S>, truth: &Tensor<S>) -> Result<(f64, Tensor<S>)> {
        truth.check_shape(pred.shape(), "loss operands")?;
        let n = pred.data().len() as f64;
        let mut total = 0.0;
        let grad = pred
            .data()
            .iter()
            .zip(truth.data())
            .map(|(&p, &t)| {
                let r = p.f64() - t.f64();
                match self {
                    LossKind::Mae => {
                        total += r.abs();
                        S::lit(if r > 0.0 {
                            1.0 / n
                        } else if r < 0.0 {
                            -1.0 / n
                        } else {
                            0.0
                        })
                    }
                    LossKind::Squared => {
                        total += r * r;
                        S::lit(2.0 * r / n)
                    }
                }
            })
            .collect();
        Ok((total / n, Tensor::from_vec(pred.shape(), grad)?))
    }
}

/// How the diffusion time of each training example is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSampling {
    /// Noise rate uniform on `[1/T, 1]`.
    #[default]
    Continuous,
    /// One of the `T` schedule levels, uniformly.
    Discrete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub wd_start: f64,
    pub wd_end: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub time_sampling: TimeSampling,
    /// Schedule length `T`; also bounds the continuous noise-rate range.
    pub steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr_start: 1e-4,
            lr_end: 1e-5,
            wd_start: 1e-5,
            wd_end: 1e-6,
            seed: 0,
            loss: LossKind::Mae,
            time_sampling: TimeSampling::Continuous,
            steps: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 || self.steps < 1 {
            return Err(Error::Config(
                "epochs, batch_size and steps must be at least 1".into(),
            ));
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start && self.lr_start.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < lr_end <= lr_start, got {} and {}",
                self.lr_end, self.lr_start
            )));
        }
        if !(self.wd_end >= 0.0 && self.wd_start >= 0.0 && self.wd_start.is_finite()) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        linear_decay(self.lr_start, self.lr_end, epoch, self.epochs)
    }

    pub fn wd_at(&self, epoch: usize) -> f64 {
        linear_decay(self.wd_start, self.wd_end, epoch, self.epochs)
    }
}

/// Noises `x0` at per-element signal variances `alphas`, runs the denoiser,
/// accumulates parameter gradients of the noise-prediction loss and returns
/// the loss.
pub fn diffusion_loss<S: Scalar>(
    net: &mut DiffusionNet<S>,
    x0: &Tensor<S>,
    cond: &Tensor<S>,
    alphas: &[f64],
    eps: &Tensor<S>,
    loss: LossKind,
) -> Result<f64> {
    eps.check_shape(x0.shape(), "noise batch")?;
    let mut x_t = x0.clone();
    for (i, &a) in alphas.iter().enumerate() {
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        for (x, &e) in x_t.sample_mut(i).iter_mut().zip(eps.sample(i)) {
            *x = S::lit(sa * x.f64() + sn * e.f64());
        }
    }
    let input = super::assemble_input(&x_t, cond, alphas, &net.embedding)?;
    let (raw, cache) = net.model.forward_train(&input)?;
    let eps_hat = net.to_eps(&x_t, &raw, alphas);
    let (value, mut grad) = loss.eval(&eps_hat, eps)?;
    net.eps_grad_to_raw(&mut grad, alphas);
    net.model.backward(cache, &grad);
    Ok(value)
}

/// Optimises a [`DiffusionNet`] one batch at a time.
pub struct Trainer {
    net: DiffusionNet<f32>,
    opt: AdamW,
    rng: ChaCha8Rng,
    cfg: TrainConfig,
    schedule: NoiseSchedule,
    epoch: usize,
    step: usize,
}

impl Trainer {
    pub fn new(net: DiffusionNet<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            net,
            opt: AdamW::new(AdamWConfig::default()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            schedule: schedule_linear(cfg.steps)?,
            cfg,
            epoch: 0,
            step: 0,
        })
    }

    pub fn net(&self) -> &DiffusionNet<f32> {
        &self.net
    }

    pub fn into_net(self) -> DiffusionNet<f32> {
        self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Selects the learning rate and weight decay of `epoch`.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn draw_alpha(&mut self) -> f64 {
        let alpha = match self.cfg.time_sampling {
            TimeSampling::Continuous => {
                let lo = 1.0 / self.cfg.steps as f64;
                let r: f64 = if lo < 1.0 {
                    self.rng.random_range(lo..=1.0)
                } else {
                    1.0
                };
                1.0 - r * r
            }
            TimeSampling::Discrete => {
                let k = self.rng.random_range(0..self.schedule.steps());
                self.schedule.alphas()[k]
            }
        };
        alpha.max(ALPHA_FLOOR)
    }

    /// One optimiser update on a batch of conditioning stacks `[n,4,h,w]` and
    /// targets `[n,1,h,w]`.
    pub fn train_step(&mut self, cond: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64> {
        let n = target.n();
        let alphas: Vec<f64> = (0..n).map(|_| self.draw_alpha()).collect();
        let eps_data: Vec<f32> = (0..target.data().len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                z as f32
            })
            .collect();
        let eps = Tensor::from_vec(target.shape(), eps_data)?;

        self.net.model.zero_grad();
        let loss = diffusion_loss(&mut self.net, target, cond, &alphas, &eps, self.cfg.loss)?;
        self.step += 1;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                loss,
            });
        }
        let (lr, wd) = (self.cfg.lr_at(self.epoch), self.cfg.wd_at(self.epoch));
        self.opt.step(&mut self.net.model.params_mut(), lr, wd);
        Ok(loss)
    }
}
