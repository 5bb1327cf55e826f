//! Predictors: the diffusion denoiser and the regression baselines, built on
//! a small set of layers with hand-written gradients.

mod edsr;
mod espcn;
pub mod layers;
mod optim;
pub mod tensor;
mod unet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use edsr::{Edsr, EdsrBlock, EdsrCache, EdsrSpec};
pub use espcn::{Espcn, EspcnCache, EspcnSpec};
pub use layers::{Conv2d, Init, Param};
pub use optim::{linear_decay, AdamW, AdamWConfig};
pub use tensor::{Scalar, Tensor};
pub use unet::{ResBlock, UNet, UNetCache, UNetSpec};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    DiffusionUnet,
    Espcn,
    Edsr,
    Runet,
    Bilinear,
}

impl PredictorKind {
    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::DiffusionUnet => "diffusion_unet",
            PredictorKind::Espcn => "espcn",
            PredictorKind::Edsr => "edsr",
            PredictorKind::Runet => "runet",
            PredictorKind::Bilinear => "bilinear",
        }
    }

    /// Post-upsampling baselines consume low-resolution frames directly.
    pub fn is_post_upsampling(self) -> bool {
        matches!(self, PredictorKind::Espcn | PredictorKind::Edsr)
    }
}

impl std::str::FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "diffusion_unet" => PredictorKind::DiffusionUnet,
            "espcn" => PredictorKind::Espcn,
            "edsr" => PredictorKind::Edsr,
            "runet" => PredictorKind::Runet,
            "bilinear" => PredictorKind::Bilinear,
            other => return Err(Error::Config(format!("unknown model kind {other:?}"))),
        })
    }
}

/// Architecture of a trainable predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    DiffusionUnet(UNetSpec),
    Runet(UNetSpec),
    Espcn(EspcnSpec),
    Edsr(EdsrSpec),
}

impl ModelSpec {
    pub fn kind(&self) -> PredictorKind {
        match self {
            ModelSpec::DiffusionUnet(_) => PredictorKind::DiffusionUnet,
            ModelSpec::Runet(_) => PredictorKind::Runet,
            ModelSpec::Espcn(_) => PredictorKind::Espcn,
            ModelSpec::Edsr(_) => PredictorKind::Edsr,
        }
    }

    /// Regressor U-Net sharing the denoiser's body but without noise inputs.
    pub fn runet(mut spec: UNetSpec) -> Self {
        spec.embed_freqs = 0;
        ModelSpec::Runet(spec)
    }

    pub fn upscale(&self) -> Option<usize> {
        match self {
            ModelSpec::Espcn(s) => Some(s.upscale),
            ModelSpec::Edsr(s) => Some(s.upscale),
            _ => None,
        }
    }
}

/// Exact number of trainable parameters of an architecture.
pub fn parameter_count(spec: &ModelSpec) -> usize {
    match spec {
        ModelSpec::DiffusionUnet(s) | ModelSpec::Runet(s) => s.parameter_count(),
        ModelSpec::Espcn(s) => s.parameter_count(),
        ModelSpec::Edsr(s) => s.parameter_count(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model<S> {
    DiffusionUnet(UNet<S>),
    /// U-Net regressor; its output is added to the `t0` conditioning frame.
    Runet(UNet<S>),
    Espcn(Espcn<S>),
    Edsr(Edsr<S>),
}

pub enum ModelCache<S> {
    Unet(UNetCache<S>),
    Espcn(EspcnCache<S>),
    Edsr(EdsrCache<S>),
}

/// Channel of the `t0` frame within the conditioning stack.
pub const T0_CHANNEL: usize = 2;

impl<S: Scalar> Model<S> {
    /// Builds a freshly initialised model; weights depend only on `seed`.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match spec {
            ModelSpec::DiffusionUnet(s) => {
                if s.embed_freqs == 0 {
                    return Err(Error::Parameter(
                        "diffusion U-Net needs an embedding".into(),
                    ));
                }
                Model::DiffusionUnet(UNet::new(s.clone(), &mut rng)?)
            }
            ModelSpec::Runet(s) => {
                if s.embed_freqs != 0 {
                    return Err(Error::Parameter(
                        "regressor U-Net takes no embedding".into(),
                    ));
                }
                Model::Runet(UNet::new(s.clone(), &mut rng)?)
            }
            ModelSpec::Espcn(s) => Model::Espcn(Espcn::new(s.clone(), &mut rng)?),
            ModelSpec::Edsr(s) => Model::Edsr(Edsr::new(s.clone(), &mut rng)?),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::DiffusionUnet(m) => ModelSpec::DiffusionUnet(m.spec().clone()),
            Model::Runet(m) => ModelSpec::Runet(m.spec().clone()),
            Model::Espcn(m) => ModelSpec::Espcn(m.spec().clone()),
            Model::Edsr(m) => ModelSpec::Edsr(m.spec().clone()),
        }
    }

    pub fn kind(&self) -> PredictorKind {
        self.spec().kind()
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            Model::DiffusionUnet(m) => m.forward(x),
            Model::Runet(m) => {
                let mut y = m.forward(x)?;
                add_t0(&mut y, x);
                Ok(y)
            }
            Model::Espcn(m) => m.forward(x),
            Model::Edsr(m) => m.forward(x),
        }
    }

    pub fn forward_train(&self, x: &Tensor<S>) -> Result<(Tensor<S>, ModelCache<S>)> {
        Ok(match self {
            Model::DiffusionUnet(m) => {
                let (y, c) = m.forward_train(x)?;
                (y, ModelCache::Unet(c))
            }
            Model::Runet(m) => {
                let (mut y, c) = m.forward_train(x)?;
                add_t0(&mut y, x);
                (y, ModelCache::Unet(c))
            }
            Model::Espcn(m) => {
                let (y, c) = m.forward_train(x)?;
                (y, ModelCache::Espcn(c))
            }
            Model::Edsr(m) => {
                let (y, c) = m.forward_train(x)?;
                (y, ModelCache::Edsr(c))
            }
        })
    }

    /// Accumulates gradients of the loss whose output gradient is `dy`.
    pub fn backward(&mut self, cache: ModelCache<S>, dy: &Tensor<S>) {
        match (self, cache) {
            (Model::DiffusionUnet(m) | Model::Runet(m), ModelCache::Unet(c)) => m.backward(c, dy),
            (Model::Espcn(m), ModelCache::Espcn(c)) => m.backward(c, dy),
            (Model::Edsr(m), ModelCache::Edsr(c)) => m.backward(c, dy),
            _ => panic!("cache produced by a different architecture"),
        }
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        match self {
            Model::DiffusionUnet(m) | Model::Runet(m) => m.params(),
            Model::Espcn(m) => m.params(),
            Model::Edsr(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        match self {
            Model::DiffusionUnet(m) | Model::Runet(m) => m.params_mut(),
            Model::Espcn(m) => m.params_mut(),
            Model::Edsr(m) => m.params_mut(),
        }
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// All weights concatenated in parameter order, as 32-bit values.
    pub fn flat_weights(&self) -> Vec<f32> {
        self.params()
            .iter()
            .flat_map(|p| p.value.iter().map(|v| v.f64() as f32))
            .collect()
    }

    pub fn load_flat_weights(&mut self, flat: &[f32]) -> Result<()> {
        let expect = self.parameter_count();
        if flat.len() != expect {
            return Err(Error::Shape(format!(
                "weight buffer has {} values, model needs {expect}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            for (dst, &src) in p.value.iter_mut().zip(&flat[offset..]) {
                *dst = S::lit(src as f64);
            }
            offset += p.len();
        }
        Ok(())
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }
}

fn add_t0<S: Scalar>(y: &mut Tensor<S>, x: &Tensor<S>) {
    let hw = y.h() * y.w();
    for i in 0..y.n() {
        let base = x.plane(i, T0_CHANNEL).to_vec();
        for (d, s) in y.sample_mut(i)[..hw].iter_mut().zip(base) {
            *d = *d + s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_is_tagged() {
        let spec = ModelSpec::DiffusionUnet(UNetSpec::desk());
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"diffusion_unet\""));
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn weights_roundtrip() {
        let spec = ModelSpec::Edsr(EdsrSpec::new(2));
        let a = Model::<f32>::new(&spec, 3).unwrap();
        let mut b = Model::<f32>::new(&spec, 4).unwrap();
        assert_ne!(a, b);
        b.load_flat_weights(&a.flat_weights()).unwrap();
        assert_eq!(a, b);
    }
}
