//! Residual-scaling baseline: a trunk of residual blocks whose branch output
//! is multiplied by a constant before the skip add, followed by a sub-pixel
//! upsampling head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{pixel_shuffle, pixel_unshuffle, swish, swish_backward, Conv2d, Init, Param};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdsrSpec {
    pub upscale: usize,
    pub features: usize,
    pub blocks: usize,
    pub res_scale: f64,
}

impl EdsrSpec {
    pub fn new(upscale: usize) -> Self {
        EdsrSpec {
            upscale,
            features: 32,
            blocks: 4,
            res_scale: 0.1,
        }
    }

    pub fn parameter_count(&self) -> usize {
        let f = self.features;
        let conv = |cin: usize, cout: usize| cin * cout * 9 + cout;
        conv(4, f)
            + self.blocks * 2 * conv(f, f)
            + conv(f, f)
            + conv(f, f * self.upscale * self.upscale)
            + conv(f, 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdsrBlock<S> {
    pub conv1: Conv2d<S>,
    pub conv2: Conv2d<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edsr<S> {
    spec: EdsrSpec,
    pub head: Conv2d<S>,
    pub blocks: Vec<EdsrBlock<S>>,
    pub trunk: Conv2d<S>,
    pub upsample: Conv2d<S>,
    pub tail: Conv2d<S>,
}

pub struct EdsrCache<S> {
    x: Tensor<S>,
    /// Per block: input, pre-activation, activation.
    blocks: Vec<[Tensor<S>; 3]>,
    trunk_in: Tensor<S>,
    up_in: Tensor<S>,
    tail_in: Tensor<S>,
}

impl<S: Scalar> Edsr<S> {
    pub fn new(spec: EdsrSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.upscale == 0 || spec.features == 0 {
            return Err(Error::Config(
                "EDSR needs positive upscale and width".into(),
            ));
        }
        let f = spec.features;
        let head = Conv2d::new(4, f, 3, Init::FanIn, rng);
        let blocks = (0..spec.blocks)
            .map(|_| EdsrBlock {
                conv1: Conv2d::new(f, f, 3, Init::FanIn, rng),
                conv2: Conv2d::new(f, f, 3, Init::FanIn, rng),
            })
            .collect();
        let trunk = Conv2d::new(f, f, 3, Init::FanIn, rng);
        let upsample = Conv2d::new(f, f * spec.upscale * spec.upscale, 3, Init::FanIn, rng);
        let tail = Conv2d::new(f, 1, 3, Init::Zeros, rng);
        Ok(Edsr {
            spec,
            head,
            blocks,
            trunk,
            upsample,
            tail,
        })
    }

    pub fn spec(&self) -> &EdsrSpec {
        &self.spec
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Tensor<S>) -> Result<(Tensor<S>, EdsrCache<S>)> {
        if x.c() != 4 {
            return Err(Error::Shape(format!(
                "EDSR expects 4 frames, got {}",
                x.c()
            )));
        }
        let scale = S::lit(self.spec.res_scale);
        let feat = self.head.forward(x);
        let mut h = feat.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let a = b.conv1.forward(&h);
            let s = swish(&a);
            let mut r = b.conv2.forward(&s);
            r.scale(scale);
            let mut out = h.clone();
            out.add_assign(&r);
            blocks.push([h, a, s]);
            h = out;
        }
        let mut t = self.trunk.forward(&h);
        t.add_assign(&feat);
        let u = pixel_shuffle(&self.upsample.forward(&t), self.spec.upscale);
        let us = swish(&u);
        let y = self.tail.forward(&us);
        Ok((
            y,
            EdsrCache {
                x: x.clone(),
                blocks,
                trunk_in: h,
                up_in: t,
                tail_in: u,
            },
        ))
    }

    pub fn backward(&mut self, c: EdsrCache<S>, dy: &Tensor<S>) {
        let scale = S::lit(self.spec.res_scale);
        let us = swish(&c.tail_in);
        let dus = self.tail.backward(&us, dy, true).expect("dx requested");
        let du = swish_backward(&c.tail_in, &dus);
        let dt = self
            .upsample
            .backward(&c.up_in, &pixel_unshuffle(&du, self.spec.upscale), true)
            .expect("dx requested");
        // t = trunk(h) + feat
        let mut dfeat = dt.clone();
        let mut dh = self
            .trunk
            .backward(&c.trunk_in, &dt, true)
            .expect("dx requested");
        for (b, [h_in, a, s]) in self.blocks.iter_mut().zip(c.blocks).rev() {
            let mut dr = dh.clone();
            dr.scale(scale);
            let ds = b.conv2.backward(&s, &dr, true).expect("dx requested");
            let da = swish_backward(&a, &ds);
            let dbranch = b.conv1.backward(&h_in, &da, true).expect("dx requested");
            dh.add_assign(&dbranch);
        }
        dfeat.add_assign(&dh);
        self.head.backward(&c.x, &dfeat, false);
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        let mut v: Vec<&Param<S>> = self.head.params().into_iter().collect();
        for b in &self.blocks {
            v.extend(b.conv1.params());
            v.extend(b.conv2.params());
        }
        v.extend(self.trunk.params());
        v.extend(self.upsample.params());
        v.extend(self.tail.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v: Vec<&mut Param<S>> = self.head.params_mut().into_iter().collect();
        for b in &mut self.blocks {
            v.extend(b.conv1.params_mut());
            v.extend(b.conv2.params_mut());
        }
        v.extend(self.trunk.params_mut());
        v.extend(self.upsample.params_mut());
        v.extend(self.tail.params_mut());
        v
    }
}
