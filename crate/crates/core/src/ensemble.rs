//! Ensemble diffusion: several conditioned samples with independent initial
//! noise, aggregated by their cellwise mean.

use serde::{Deserialize, Serialize};

use crate::diffusion::{sample_batch, schedule_linear, Denoiser, SampleOptions};
use crate::error::{Error, Result};
use crate::grids::Field;
use crate::models::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSpec {
    pub members: usize,
    pub steps: usize,
    /// Member `k` starts from noise seeded with `base_seed + k`.
    pub base_seed: u64,
    /// Fresh-noise scale per step (0 = deterministic DDIM).
    pub eta: f64,
    /// Upper bound on the folded batch (members x windows) per network call.
    pub max_batch: usize,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            members: 15,
            steps: 5,
            base_seed: 0,
            eta: 0.0,
            max_batch: 32,
        }
    }
}

impl EnsembleSpec {
    pub fn member_seed(&self, member: usize) -> u64 {
        self.base_seed.wrapping_add(member as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members < 1 || self.steps < 1 {
            return Err(Error::Parameter(
                "members and steps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleOutput {
    /// `[n, 1, H, W]` cellwise member mean.
    pub mean: Tensor<f32>,
    /// One `[n, 1, H, W]` tensor per member, in seed order (empty unless kept).
    pub members: Vec<Tensor<f32>>,
}

/// Samples `spec.members` outputs for each of the `n` conditioning stacks in
/// `cond` (`[n, 4, H, W]`). Members are folded into the batch dimension
/// member-major, so element `k * n + i` is member `k` of window `i`.
pub fn ensemble_sample(
    denoiser: &dyn Denoiser,
    cond: &Tensor<f32>,
    spec: &EnsembleSpec,
    keep_members: bool,
) -> Result<EnsembleOutput> {
    spec.validate()?;
    let schedule = schedule_linear(spec.steps)?;
    let [n, c, h, w] = cond.shape();
    let per_call = (spec.max_batch.max(1) / n.max(1)).max(1);
    let opts = SampleOptions { eta: spec.eta };
    let mut members: Vec<Tensor<f32>> = Vec::with_capacity(spec.members);
    let mut start = 0;
    while start < spec.members {
        let k = per_call.min(spec.members - start);
        let mut folded = Vec::with_capacity(k * cond.data().len());
        let mut seeds = Vec::with_capacity(k * n);
        for m in start..start + k {
            folded.extend_from_slice(cond.data());
            seeds.extend(std::iter::repeat_n(spec.member_seed(m), n));
        }
        let folded = Tensor::from_vec([k * n, c, h, w], folded)?;
        let out = sample_batch(denoiser, &folded, &schedule, &seeds, opts).map_err(|e| {
            if e.is_numerical() {
                Error::PartialEnsemble {
                    seed: spec.member_seed(start),
                    reason: e.to_string(),
                }
            } else {
                e
            }
        })?;
        let len = n * h * w;
        for (j, m) in (start..start + k).enumerate() {
            let data = out.data()[j * len..(j + 1) * len].to_vec();
            if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
                return Err(Error::PartialEnsemble {
                    seed: spec.member_seed(m),
                    reason: format!("non-finite output value {bad}"),
                });
            }
            members.push(Tensor::from_vec([n, 1, h, w], data)?);
        }
        start += k;
    }
    let mean = mean_of(&members)?;
    if !keep_members {
        members.clear();
    }
    Ok(EnsembleOutput { mean, members })
}

/// Cellwise mean, summed in member order in `f64`.
pub fn mean_of(members: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = members
        .first()
        .ok_or_else(|| Error::Parameter("mean of zero members".into()))?;
    let mut acc = vec![0.0f64; first.data().len()];
    for m in members {
        m.check_shape(first.shape(), "ensemble member")?;
        for (a, &v) in acc.iter_mut().zip(m.data()) {
            *a += v as f64;
        }
    }
    let k = members.len() as f64;
    Tensor::from_vec(
        first.shape(),
        acc.into_iter().map(|a| (a / k) as f32).collect(),
    )
}

fn check_members(members: &[Field]) -> Result<()> {
    let first = members
        .first()
        .ok_or_else(|| Error::Parameter("no ensemble members".into()))?;
    if members.iter().any(|m| !m.grid().same_as(first.grid())) {
        return Err(Error::Extent("ensemble members on different grids".into()));
    }
    Ok(())
}

/// Cellwise mean of member fields. Each cell's values are summed in sorted
/// order, so the result does not depend on member order.
pub fn ensemble_mean(members: &[Field]) -> Result<Field> {
    check_members(members)?;
    let first = &members[0];
    let k = members.len() as f64;
    let mut cell = Vec::with_capacity(members.len());
    let values = (0..first.grid().len())
        .map(|i| {
            cell.clear();
            cell.extend(members.iter().map(|m| m.as_slice()[i]));
            cell.sort_by(f32::total_cmp);
            (cell.iter().map(|&v| v as f64).sum::<f64>() / k) as f32
        })
        .collect();
    Field::from_vec(*first.grid(), values, first.units())
}

/// Cellwise sample standard deviation (`n - 1` denominator).
pub fn ensemble_spread(members: &[Field]) -> Result<Field> {
    if members.len() < 2 {
        return Err(Error::Parameter(format!(
            "spread needs at least 2 members, got {}",
            members.len()
        )));
    }
    check_members(members)?;
    let first = &members[0];
    let k = members.len() as f64;
    let values = (0..first.grid().len())
        .map(|i| {
            let mean = members.iter().map(|m| m.as_slice()[i] as f64).sum::<f64>() / k;
            let ss: f64 = members
                .iter()
                .map(|m| (m.as_slice()[i] as f64 - mean).powi(2))
                .sum();
            (ss / (k - 1.0)).sqrt() as f32
        })
        .collect();
    Field::from_vec(*first.grid(), values, first.units())
}
