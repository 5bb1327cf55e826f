use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ddim_step_stochastic, Denoiser, NoiseSchedule, ALPHA_FLOOR};
use crate::error::{Error, Result};
use crate::grids::{Field, Units};
use crate::models::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleOptions {
    /// Scale of fresh noise injected per step; 0 gives deterministic DDIM.
    pub eta: f64,
}

fn normal_plane(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z as f32
        })
        .collect()
}

/// Runs the reverse process for a batch; element `i` starts from standard
/// normal noise drawn with `seeds[i]`.
pub fn sample_batch(
    denoiser: &dyn Denoiser,
    cond: &Tensor<f32>,
    schedule: &NoiseSchedule,
    seeds: &[u64],
    opts: SampleOptions,
) -> Result<Tensor<f32>> {
    let [n, _, h, w] = cond.shape();
    if seeds.len() != n {
        return Err(Error::Shape(format!(
            "{} seeds for batch of {n}",
            seeds.len()
        )));
    }
    if schedule.steps() == 0 {
        return Err(Error::Parameter("empty schedule".into()));
    }
    let hw = h * w;
    let mut rngs: Vec<ChaCha8Rng> = seeds
        .iter()
        .map(|&s| ChaCha8Rng::seed_from_u64(s))
        .collect();
    let mut init = Vec::with_capacity(n * hw);
    for rng in &mut rngs {
        init.extend(normal_plane(rng, hw));
    }
    let mut x = Tensor::from_vec([n, 1, h, w], init)?;

    let alphas: Vec<f64> = schedule
        .alphas()
        .iter()
        .map(|a| a.max(ALPHA_FLOOR))
        .collect();
    for (k, &a_t) in alphas.iter().enumerate() {
        let a_prev = alphas.get(k + 1).copied().unwrap_or(1.0);
        let eps_hat = denoiser.predict_eps(&x, cond, &vec![a_t; n])?;
        let z = if opts.eta > 0.0 && a_prev < 1.0 {
            let mut z = Vec::with_capacity(n * hw);
            for rng in &mut rngs {
                z.extend(normal_plane(rng, hw));
            }
            Tensor::from_vec([n, 1, h, w], z)?
        } else {
            Tensor::zeros([n, 1, h, w])
        };
        x = ddim_step_stochastic(&x, &eps_hat, a_t, a_prev, opts.eta, &z)?;
    }
    Ok(x)
}

/// Samples one high-resolution field from four conditioning frames.
pub fn sample(
    denoiser: &dyn Denoiser,
    conditioning: &[Field],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Field> {
    if conditioning.len() != 4 {
        return Err(Error::Shape(format!(
            "expected 4 conditioning frames, got {}",
            conditioning.len()
        )));
    }
    let grid = *conditioning[0].grid();
    let mut data = Vec::with_capacity(4 * grid.len());
    for f in conditioning {
        if !f.grid().same_as(&grid) {
            return Err(Error::Extent(
                "conditioning frames on different grids".into(),
            ));
        }
        data.extend_from_slice(f.as_slice());
    }
    let cond = Tensor::from_vec([1, 4, grid.rows(), grid.cols()], data)?;
    let out = sample_batch(denoiser, &cond, schedule, &[seed], SampleOptions::default())?;
    Field::from_vec(grid, out.into_vec(), Units::Normalized)
}
