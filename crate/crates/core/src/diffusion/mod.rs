//! DDIM core: noise schedule, noise-variance embedding, forward noising,
//! `x0` estimation, the reverse step, training and sampling.

mod denoiser;
mod sample;
mod train;

use serde::{Deserialize, Serialize};

pub use denoiser::{
    assemble_input, Denoiser, DiffusionNet, OracleDenoiser, OutputParam, ZeroDenoiser,
};
pub use sample::{sample, sample_batch, SampleOptions};
pub use train::{diffusion_loss, LossKind, TimeSampling, TrainConfig, Trainer};

use crate::error::{Error, Result};
use crate::models::{Scalar, Tensor};

/// Smallest signal variance `alpha` at which predict_x0 still divides.
pub const ALPHA_MIN: f64 = 1e-8;

/// Signal variance the sampler and trainer substitute for `alpha < ALPHA_FLOOR`,
/// i.e. a minimum signal rate of 0.02.
pub const ALPHA_FLOOR: f64 = 4e-4;

/// Ordered noise rates `sqrt(1 - alpha)` in sampling order (noisiest first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    noise_rates: Vec<f64>,
}

/// Noise rates linearly spaced from 1 down to `1/steps`.
pub fn schedule_linear(steps: usize) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::Parameter("schedule needs at least one step".into()));
    }
    let n = steps as f64;
    let noise_rates = (0..steps).map(|i| (n - i as f64) / n).collect();
    Ok(NoiseSchedule { noise_rates })
}

impl NoiseSchedule {
    pub fn from_noise_rates(noise_rates: Vec<f64>) -> Result<Self> {
        if noise_rates.is_empty() {
            return Err(Error::Parameter("empty schedule".into()));
        }
        if noise_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Schedule("noise rates must lie in [0, 1]".into()));
        }
        if noise_rates.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Schedule("noise rates must strictly decrease".into()));
        }
        Ok(NoiseSchedule { noise_rates })
    }

    pub fn steps(&self) -> usize {
        self.noise_rates.len()
    }

    pub fn noise_rates(&self) -> &[f64] {
        &self.noise_rates
    }

    pub fn signal_rates(&self) -> Vec<f64> {
        self.noise_rates
            .iter()
            .map(|r| (1.0 - r * r).sqrt())
            .collect()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.noise_rates.iter().map(|r| 1.0 - r * r).collect()
    }
}

/// Sinusoidal code of the noise variance over log-spaced frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseEmbedding {
    frequencies: Vec<f64>,
}

impl NoiseEmbedding {
    /// `count` frequencies log-spaced over `[min_freq, max_freq]`.
    pub fn log_spaced(count: usize, min_freq: f64, max_freq: f64) -> Result<Self> {
        if count == 0 || !(min_freq > 0.0 && max_freq >= min_freq && max_freq.is_finite()) {
            return Err(Error::Parameter(format!(
                "bad embedding frequencies: {count} in [{min_freq}, {max_freq}]"
            )));
        }
        let (lo, hi) = (min_freq.ln(), max_freq.ln());
        let frequencies = (0..count)
            .map(|i| {
                let f = if count == 1 {
                    0.0
                } else {
                    i as f64 / (count - 1) as f64
                };
                (lo + f * (hi - lo)).exp()
            })
            .collect();
        Ok(NoiseEmbedding { frequencies })
    }

    /// Default code: 16 frequencies from 1 to 1000.
    pub fn standard(count: usize) -> Self {
        Self::log_spaced(count, 1.0, 1000.0).expect("valid default frequencies")
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn channels(&self) -> usize {
        2 * self.frequencies.len()
    }

    /// `[sin(2 pi f_i v)..., cos(2 pi f_i v)...]`.
    pub fn embed(&self, noise_variance: f64) -> Vec<f64> {
        let tau = std::f64::consts::TAU;
        let sines = self
            .frequencies
            .iter()
            .map(|f| (tau * f * noise_variance).sin());
        let cosines = self
            .frequencies
            .iter()
            .map(|f| (tau * f * noise_variance).cos());
        sines.chain(cosines).collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

fn combine<S: Scalar>(
    a: f64,
    x: &Tensor<S>,
    b: f64,
    y: &Tensor<S>,
    what: &str,
) -> Result<Tensor<S>> {
    y.check_shape(x.shape(), what)?;
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&u, &v)| S::lit(a * u.f64() + b * v.f64()))
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// `sqrt(alpha) * x0 + sqrt(1 - alpha) * eps`.
pub fn forward_noise<S: Scalar>(x0: &Tensor<S>, alpha: f64, eps: &Tensor<S>) -> Result<Tensor<S>> {
    check_alpha(alpha)?;
    combine(alpha.sqrt(), x0, (1.0 - alpha).sqrt(), eps, "noise batch")
}

/// `(x_t - sqrt(1 - alpha) * eps_hat) / sqrt(alpha)`.
pub fn predict_x0<S: Scalar>(
    x_t: &Tensor<S>,
    eps_hat: &Tensor<S>,
    alpha: f64,
) -> Result<Tensor<S>> {
    check_alpha(alpha)?;
    if alpha < ALPHA_MIN {
        return Err(Error::Singularity(alpha));
    }
    let s = alpha.sqrt();
    combine(
        1.0 / s,
        x_t,
        -(1.0 - alpha).sqrt() / s,
        eps_hat,
        "noise estimate",
    )
}

/// Deterministic DDIM update from `alpha_t` to the less noisy `alpha_prev`,
/// re-applying the predicted noise.
pub fn ddim_step<S: Scalar>(
    x_t: &Tensor<S>,
    eps_hat: &Tensor<S>,
    alpha_t: f64,
    alpha_prev: f64,
) -> Result<Tensor<S>> {
    check_alpha(alpha_prev)?;
    if alpha_prev < alpha_t {
        return Err(Error::Schedule(format!(
            "alpha_prev {alpha_prev} is noisier than alpha_t {alpha_t}"
        )));
    }
    let x0 = predict_x0(x_t, eps_hat, alpha_t)?;
    if alpha_prev == 1.0 {
        return Ok(x0);
    }
    combine(
        alpha_prev.sqrt(),
        &x0,
        (1.0 - alpha_prev).sqrt(),
        eps_hat,
        "noise estimate",
    )
}

/// Generalised step with fresh noise `z` of scale
/// `eta * sqrt((1 - a_prev) / (1 - a_t)) * sqrt(1 - a_t / a_prev)`;
/// `eta = 0` reduces to [`ddim_step`].
pub fn ddim_step_stochastic<S: Scalar>(
    x_t: &Tensor<S>,
    eps_hat: &Tensor<S>,
    alpha_t: f64,
    alpha_prev: f64,
    eta: f64,
    z: &Tensor<S>,
) -> Result<Tensor<S>> {
    if eta == 0.0 {
        return ddim_step(x_t, eps_hat, alpha_t, alpha_prev);
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Parameter(format!(
            "stochastic sigma must be non-negative, got {eta}"
        )));
    }
    check_alpha(alpha_prev)?;
    if alpha_prev < alpha_t {
        return Err(Error::Schedule(format!(
            "alpha_prev {alpha_prev} is noisier than alpha_t {alpha_t}"
        )));
    }
    let x0 = predict_x0(x_t, eps_hat, alpha_t)?;
    z.check_shape(x_t.shape(), "fresh noise")?;
    let sigma = if alpha_t < 1.0 {
        eta * ((1.0 - alpha_prev) / (1.0 - alpha_t)).sqrt() * (1.0 - alpha_t / alpha_prev).sqrt()
    } else {
        0.0
    };
    let dir = (1.0 - alpha_prev - sigma * sigma).max(0.0).sqrt();
    let sp = alpha_prev.sqrt();
    let data = x0
        .data()
        .iter()
        .zip(eps_hat.data())
        .zip(z.data())
        .map(|((&a, &e), &n)| S::lit(sp * a.f64() + dir * e.f64() + sigma * n.f64()))
        .collect();
    Tensor::from_vec(x_t.shape(), data)
}
