//! Residual U-Net used both as the diffusion denoiser and as a standalone
//! regressor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool2, avg_pool2_backward, concat_channels, split_channels, swish, swish_backward,
    upsample2, upsample2_backward, Conv2d, Init, Param,
};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetSpec {
    /// Width of each resolution level, finest first.
    pub channels: Vec<usize>,
    pub blocks_per_level: usize,
    /// Residual blocks at the coarsest resolution between encoder and decoder.
    pub bridge_blocks: usize,
    /// Number of sinusoidal embedding frequencies (0 for the plain regressor).
    pub embed_freqs: usize,
}

impl UNetSpec {
    /// Full-size denoiser (~24.5M parameters).
    pub fn full() -> Self {
        UNetSpec {
            channels: vec![64, 128, 256, 384],
            blocks_per_level: 2,
            bridge_blocks: 1,
            embed_freqs: 16,
        }
    }

    /// Desk-scale denoiser (~0.8M parameters).
    pub fn desk() -> Self {
        UNetSpec {
            channels: vec![16, 32, 48, 64],
            ..Self::full()
        }
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    /// Channels of the assembled input: noisy target, four conditioning
    /// frames and the `2F` embedding channels. Without an embedding the
    /// network sees only the conditioning stack.
    pub fn in_channels(&self) -> usize {
        if self.embed_freqs == 0 {
            4
        } else {
            1 + 4 + 2 * self.embed_freqs
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Parameter(
                "U-Net needs at least one non-empty level".into(),
            ));
        }
        if self.channels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter(format!(
                "U-Net channels must increase strictly with depth, got {:?}",
                self.channels
            )));
        }
        if self.blocks_per_level == 0 {
            return Err(Error::Parameter(
                "blocks_per_level must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Spatial sizes must survive `depth` halvings.
    pub fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let m = 1 << self.depth();
        if h == 0 || w == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::Shape(format!(
                "U-Net of depth {} needs spatial size divisible by {m}, got {h}x{w}",
                self.depth()
            )));
        }
        Ok(())
    }

    /// Exact trainable-parameter count, computed from the layer shapes alone.
    pub fn parameter_count(&self) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let block = |cin: usize, cout: usize| {
            conv(cin, cout, 3)
                + conv(cout, cout, 3)
                + if cin != cout { conv(cin, cout, 1) } else { 0 }
        };
        let c = &self.channels;
        let mut total = conv(self.in_channels(), c[0], 1);
        let mut width = c[0];
        for &w in c {
            for _ in 0..self.blocks_per_level {
                total += block(width, w);
                width = w;
            }
        }
        for _ in 0..self.bridge_blocks {
            total += block(width, width);
        }
        for &w in c.iter().rev() {
            for _ in 0..self.blocks_per_level {
                total += block(width + w, w);
                width = w;
            }
        }
        total + conv(width, 1, 1)
    }
}

/// `out = skip(x) + conv(swish(conv(x)))`, with a 1x1 projection on the
/// skip path when the width changes.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<S> {
    pub conv1: Conv2d<S>,
    pub conv2: Conv2d<S>,
    pub proj: Option<Conv2d<S>>,
}

pub struct ResBlockCache<S> {
    x: Tensor<S>,
    a: Tensor<S>,
    h: Tensor<S>,
}

impl<S: Scalar> ResBlock<S> {
    pub fn new(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        ResBlock {
            conv1: Conv2d::new(cin, cout, 3, Init::FanIn, rng),
            conv2: Conv2d::new(cout, cout, 3, Init::FanIn, rng),
            proj: (cin != cout).then(|| Conv2d::new(cin, cout, 1, Init::FanIn, rng)),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Tensor<S> {
        self.forward_train(x).0
    }

    pub fn forward_train(&self, x: &Tensor<S>) -> (Tensor<S>, ResBlockCache<S>) {
        let a = self.conv1.forward(x);
        let h = swish(&a);
        let mut out = self.conv2.forward(&h);
        match &self.proj {
            Some(p) => out.add_assign(&p.forward(x)),
            None => out.add_assign(x),
        }
        (out, ResBlockCache { x: x.clone(), a, h })
    }

    pub fn backward(&mut self, cache: ResBlockCache<S>, dy: &Tensor<S>) -> Tensor<S> {
        let dh = self
            .conv2
            .backward(&cache.h, dy, true)
            .expect("dx requested");
        let da = swish_backward(&cache.a, &dh);
        let mut dx = self
            .conv1
            .backward(&cache.x, &da, true)
            .expect("dx requested");
        match &mut self.proj {
            Some(p) => dx.add_assign(&p.backward(&cache.x, dy, true).expect("dx requested")),
            None => dx.add_assign(dy),
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        let mut v: Vec<&Param<S>> = self.conv1.params().into_iter().collect();
        v.extend(self.conv2.params());
        if let Some(p) = &self.proj {
            v.extend(p.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v: Vec<&mut Param<S>> = self.conv1.params_mut().into_iter().collect();
        v.extend(self.conv2.params_mut());
        if let Some(p) = &mut self.proj {
            v.extend(p.params_mut());
        }
        v
    }

    pub fn conv_count(&self) -> usize {
        2 + usize::from(self.proj.is_some())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNet<S> {
    spec: UNetSpec,
    stem: Conv2d<S>,
    down: Vec<ResBlock<S>>,
    bridge: Vec<ResBlock<S>>,
    up: Vec<ResBlock<S>>,
    head: Conv2d<S>,
}

pub struct UNetCache<S> {
    stem_in: Tensor<S>,
    down: Vec<ResBlockCache<S>>,
    bridge: Vec<ResBlockCache<S>>,
    up: Vec<ResBlockCache<S>>,
    head_in: Tensor<S>,
}

impl<S: Scalar> UNet<S> {
    pub fn new(spec: UNetSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let c = spec.channels.clone();
        let stem = Conv2d::new(spec.in_channels(), c[0], 1, Init::FanIn, rng);
        let mut width = c[0];
        let mut down = Vec::new();
        for &w in &c {
            for _ in 0..spec.blocks_per_level {
                down.push(ResBlock::new(width, w, rng));
                width = w;
            }
        }
        let bridge = (0..spec.bridge_blocks)
            .map(|_| ResBlock::new(width, width, rng))
            .collect();
        let mut up = Vec::new();
        for &w in c.iter().rev() {
            for _ in 0..spec.blocks_per_level {
                up.push(ResBlock::new(width + w, w, rng));
                width = w;
            }
        }
        let head = Conv2d::new(width, 1, 1, Init::Zeros, rng);
        Ok(UNet {
            spec,
            stem,
            down,
            bridge,
            up,
            head,
        })
    }

    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    pub fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        if x.c() != self.spec.in_channels() {
            return Err(Error::Shape(format!(
                "U-Net expects {} input channels, got {}",
                self.spec.in_channels(),
                x.c()
            )));
        }
        self.spec.check_spatial(x.h(), x.w())
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(x)?;
        let bpl = self.spec.blocks_per_level;
        let mut h = self.stem.forward(x);
        let mut skips = Vec::with_capacity(self.down.len());
        for level in self.down.chunks(bpl) {
            for block in level {
                h = block.forward(&h);
                skips.push(h.clone());
            }
            h = avg_pool2(&h);
        }
        for block in &self.bridge {
            h = block.forward(&h);
        }
        for level in self.up.chunks(bpl) {
            h = upsample2(&h);
            for block in level {
                let skip = skips.pop().expect("skip per decoder block");
                h = block.forward(&concat_channels(&h, &skip));
            }
        }
        Ok(self.head.forward(&h))
    }

    pub fn forward_train(&self, x: &Tensor<S>) -> Result<(Tensor<S>, UNetCache<S>)> {
        self.check_input(x)?;
        let bpl = self.spec.blocks_per_level;
        let mut h = self.stem.forward(x);
        let mut skips = Vec::with_capacity(self.down.len());
        let mut down = Vec::with_capacity(self.down.len());
        for level in self.down.chunks(bpl) {
            for block in level {
                let (out, cache) = block.forward_train(&h);
                down.push(cache);
                skips.push(out.clone());
                h = out;
            }
            h = avg_pool2(&h);
        }
        let mut bridge = Vec::with_capacity(self.bridge.len());
        for block in &self.bridge {
            let (out, cache) = block.forward_train(&h);
            bridge.push(cache);
            h = out;
        }
        let mut up = Vec::with_capacity(self.up.len());
        for level in self.up.chunks(bpl) {
            h = upsample2(&h);
            for block in level {
                let skip = skips.pop().expect("skip per decoder block");
                let (out, cache) = block.forward_train(&concat_channels(&h, &skip));
                up.push(cache);
                h = out;
            }
        }
        let y = self.head.forward(&h);
        Ok((
            y,
            UNetCache {
                stem_in: x.clone(),
                down,
                bridge,
                up,
                head_in: h,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream gradient `dy`.
    pub fn backward(&mut self, cache: UNetCache<S>, dy: &Tensor<S>) {
        let bpl = self.spec.blocks_per_level;
        let mut dh = self
            .head
            .backward(&cache.head_in, dy, true)
            .expect("dx requested");

        // Skip gradients indexed like the encoder outputs that produced them.
        let mut dskips: Vec<Option<Tensor<S>>> = (0..self.down.len()).map(|_| None).collect();
        let mut up_caches = cache.up;
        let up_levels: Vec<usize> = (0..self.up.len() / bpl).collect();
        for level in up_levels.into_iter().rev() {
            for b in (0..bpl).rev() {
                let block = &mut self.up[level * bpl + b];
                let bc = up_caches.pop().expect("decoder cache");
                let dcat = block.backward(bc, &dh);
                // Decoder block k (in forward order) consumed skip len-1-k.
                let k = level * bpl + b;
                let s = self.down.len() - 1 - k;
                let width = dcat.c() - self.spec.channels[self.spec.depth() - 1 - level];
                let (dprev, dskip) = split_channels(&dcat, width);
                dskips[s] = Some(dskip);
                dh = dprev;
            }
            dh = upsample2_backward(&dh);
        }

        let mut bridge_caches = cache.bridge;
        for block in self.bridge.iter_mut().rev() {
            dh = block.backward(bridge_caches.pop().expect("bridge cache"), &dh);
        }

        let mut down_caches = cache.down;
        let levels = self.down.len() / bpl;
        for level in (0..levels).rev() {
            dh = avg_pool2_backward(&dh);
            for b in (0..bpl).rev() {
                let i = level * bpl + b;
                dh.add_assign(dskips[i].as_ref().expect("skip gradient"));
                dh = self.down[i].backward(down_caches.pop().expect("encoder cache"), &dh);
            }
        }
        self.stem.backward(&cache.stem_in, &dh, false);
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        let mut v: Vec<&Param<S>> = self.stem.params().into_iter().collect();
        for b in self.down.iter().chain(&self.bridge).chain(&self.up) {
            v.extend(b.params());
        }
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v: Vec<&mut Param<S>> = self.stem.params_mut().into_iter().collect();
        for b in self
            .down
            .iter_mut()
            .chain(&mut self.bridge)
            .chain(&mut self.up)
        {
            v.extend(b.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    /// Number of convolution layers, for architecture comparisons.
    pub fn conv_count(&self) -> usize {
        2 + self
            .down
            .iter()
            .chain(&self.bridge)
            .chain(&self.up)
            .map(ResBlock::conv_count)
            .sum::<usize>()
    }
}
