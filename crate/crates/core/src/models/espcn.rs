//! Sub-pixel convolution baseline: the trunk runs at low resolution and a
//! final pixel shuffle produces the high-resolution field.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{pixel_shuffle, pixel_unshuffle, swish, swish_backward, Conv2d, Init, Param};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EspcnSpec {
    pub upscale: usize,
    /// Widths of the two hidden layers.
    pub features: [usize; 2],
}

impl EspcnSpec {
    pub fn new(upscale: usize) -> Self {
        EspcnSpec {
            upscale,
            features: [64, 32],
        }
    }

    pub fn parameter_count(&self) -> usize {
        let [f1, f2] = self.features;
        let r2 = self.upscale * self.upscale;
        (4 * 25 * f1 + f1) + (f1 * 9 * f2 + f2) + (f2 * 9 * r2 + r2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Espcn<S> {
    spec: EspcnSpec,
    conv1: Conv2d<S>,
    conv2: Conv2d<S>,
    conv3: Conv2d<S>,
}

pub struct EspcnCache<S> {
    x: Tensor<S>,
    a1: Tensor<S>,
    h1: Tensor<S>,
    a2: Tensor<S>,
    h2: Tensor<S>,
}

impl<S: Scalar> Espcn<S> {
    pub fn new(spec: EspcnSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.upscale == 0 {
            return Err(Error::Config(
                "upscale factor must be a positive integer".into(),
            ));
        }
        let [f1, f2] = spec.features;
        let r2 = spec.upscale * spec.upscale;
        Ok(Espcn {
            conv1: Conv2d::new(4, f1, 5, Init::FanIn, rng),
            conv2: Conv2d::new(f1, f2, 3, Init::FanIn, rng),
            conv3: Conv2d::new(f2, r2, 3, Init::Zeros, rng),
            spec,
        })
    }

    pub fn spec(&self) -> &EspcnSpec {
        &self.spec
    }

    fn check(&self, x: &Tensor<S>) -> Result<()> {
        if x.c() != 4 {
            return Err(Error::Shape(format!(
                "ESPCN expects 4 frames, got {}",
                x.c()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Tensor<S>) -> Result<(Tensor<S>, EspcnCache<S>)> {
        self.check(x)?;
        let a1 = self.conv1.forward(x);
        let h1 = swish(&a1);
        let a2 = self.conv2.forward(&h1);
        let h2 = swish(&a2);
        let y = pixel_shuffle(&self.conv3.forward(&h2), self.spec.upscale);
        Ok((
            y,
            EspcnCache {
                x: x.clone(),
                a1,
                h1,
                a2,
                h2,
            },
        ))
    }

    pub fn backward(&mut self, c: EspcnCache<S>, dy: &Tensor<S>) {
        let d3 = pixel_unshuffle(dy, self.spec.upscale);
        let dh2 = self.conv3.backward(&c.h2, &d3, true).expect("dx requested");
        let da2 = swish_backward(&c.a2, &dh2);
        let dh1 = self
            .conv2
            .backward(&c.h1, &da2, true)
            .expect("dx requested");
        let da1 = swish_backward(&c.a1, &dh1);
        self.conv1.backward(&c.x, &da1, false);
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        [&self.conv1, &self.conv2, &self.conv3]
            .into_iter()
            .flat_map(|c| c.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v: Vec<&mut Param<S>> = self.conv1.params_mut().into_iter().collect();
        v.extend(self.conv2.params_mut());
        v.extend(self.conv3.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn upscales_by_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Espcn::<f32>::new(EspcnSpec::new(2), &mut rng).unwrap();
        let y = net.forward(&Tensor::full([3, 4, 4, 4], 0.3)).unwrap();
        assert_eq!(y.shape(), [3, 1, 8, 8]);
        let n: usize = net.params().iter().map(|p| p.len()).sum();
        assert_eq!(n, net.spec().parameter_count());
    }
}
