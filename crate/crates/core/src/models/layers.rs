//! Layers with hand-written backward passes.
//!
//! Forward functions are pure. Backward functions take whatever the forward
//! pass saved plus the upstream gradient, accumulate parameter gradients in
//! place and return the input gradient.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::{matmul, Op, Scalar, Tensor};
use crate::exec::Exec;

/// A trainable buffer with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub value: Vec<S>,
    pub grad: Vec<S>,
}

impl<S: Scalar> Param<S> {
    pub fn zeros(len: usize) -> Self {
        Param {
            value: vec![S::zero(); len],
            grad: vec![S::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = S::zero());
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Normal with variance `1 / fan_in`.
    #[default]
    FanIn,
    Zeros,
}

/// Stride-1 2-D convolution with zero "same" padding and an odd square kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<S> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// `[cout][cin][k][k]`
    pub weight: Param<S>,
    pub bias: Param<S>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(cin: usize, cout: usize, k: usize, init: Init, rng: &mut impl Rng) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        let fan_in = cin * k * k;
        let mut weight = Param::zeros(cout * fan_in);
        if init == Init::FanIn {
            let std = (1.0 / fan_in as f64).sqrt();
            for w in weight.value.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *w = S::lit(z * std);
            }
        }
        Conv2d {
            cin,
            cout,
            k,
            weight,
            bias: Param::zeros(cout),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn kk(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn im2col(&self, x: &[S], h: usize, w: usize) -> Vec<S> {
        let (k, pad) = (self.k, self.k / 2);
        let hw = h * w;
        let mut col = vec![S::zero(); self.kk() * hw];
        for ci in 0..self.cin {
            let plane = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                    let dx = kx as isize - pad as isize;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad as isize;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let src = &plane[sy as usize * w..][..w];
                        let dst = &mut row[y * w..][..w];
                        let src_lo = (x_lo as isize + dx) as usize;
                        dst[x_lo..x_hi].copy_from_slice(&src[src_lo..src_lo + (x_hi - x_lo)]);
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[S], h: usize, w: usize) -> Vec<S> {
        let (k, pad) = (self.k, self.k / 2);
        let hw = h * w;
        let mut x = vec![S::zero(); self.cin * hw];
        for ci in 0..self.cin {
            let plane = &mut x[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                    let dx = kx as isize - pad as isize;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad as isize;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let dst = &mut plane[sy as usize * w..][..w];
                        let src = &row[y * w..][..w];
                        let dst_lo = (x_lo as isize + dx) as usize;
                        for (d, &s) in dst[dst_lo..dst_lo + (x_hi - x_lo)]
                            .iter_mut()
                            .zip(&src[x_lo..x_hi])
                        {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
        x
    }

    fn forward_sample(&self, x: &[S], h: usize, w: usize) -> Vec<S> {
        let hw = h * w;
        let mut y = vec![S::zero(); self.cout * hw];
        if self.k == 1 {
            matmul(
                self.cout,
                self.cin,
                hw,
                &self.weight.value,
                Op::N,
                x,
                Op::N,
                &mut y,
                false,
            );
        } else {
            let col = self.im2col(x, h, w);
            matmul(
                self.cout,
                self.kk(),
                hw,
                &self.weight.value,
                Op::N,
                &col,
                Op::N,
                &mut y,
                false,
            );
        }
        for (co, chunk) in y.chunks_mut(hw).enumerate() {
            let b = self.bias.value[co];
            chunk.iter_mut().for_each(|v| *v = *v + b);
        }
        y
    }

    pub fn forward(&self, x: &Tensor<S>) -> Tensor<S> {
        assert_eq!(x.c(), self.cin, "conv input channels");
        let (n, h, w) = (x.n(), x.h(), x.w());
        let outs = Exec::current().map_range(n, |i| self.forward_sample(x.sample(i), h, w));
        Tensor::stack([self.cout, h, w], outs).expect("conv output shape")
    }

    /// Accumulates weight/bias gradients and returns `dL/dx` when requested.
    pub fn backward(&mut self, x: &Tensor<S>, dy: &Tensor<S>, need_dx: bool) -> Option<Tensor<S>> {
        let (n, h, w) = (x.n(), x.h(), x.w());
        assert_eq!(
            dy.shape(),
            [n, self.cout, h, w],
            "conv upstream gradient shape"
        );
        let hw = h * w;
        let kk = self.kk();
        let this = &*self;
        let parts = Exec::current().map_range(n, |i| {
            let xs = x.sample(i);
            let dys = dy.sample(i);
            let mut dw = vec![S::zero(); this.cout * kk];
            let col;
            let col_ref: &[S] = if this.k == 1 {
                xs
            } else {
                col = this.im2col(xs, h, w);
                &col
            };
            matmul(
                this.cout,
                hw,
                kk,
                dys,
                Op::N,
                col_ref,
                Op::T,
                &mut dw,
                false,
            );
            let db: Vec<S> = dys.chunks(hw).map(|c| c.iter().copied().sum()).collect();
            let dx = need_dx.then(|| {
                let mut dcol = vec![S::zero(); kk * hw];
                matmul(
                    kk,
                    this.cout,
                    hw,
                    &this.weight.value,
                    Op::T,
                    dys,
                    Op::N,
                    &mut dcol,
                    false,
                );
                if this.k == 1 {
                    dcol
                } else {
                    this.col2im(&dcol, h, w)
                }
            });
            (dw, db, dx)
        });
        let mut dxs = Vec::with_capacity(if need_dx { n } else { 0 });
        for (dw, db, dx) in parts {
            for (g, d) in self.weight.grad.iter_mut().zip(dw) {
                *g = *g + d;
            }
            for (g, d) in self.bias.grad.iter_mut().zip(db) {
                *g = *g + d;
            }
            if let Some(dx) = dx {
                dxs.push(dx);
            }
        }
        need_dx.then(|| Tensor::stack([self.cin, h, w], dxs).expect("conv dx shape"))
    }

    pub fn params_mut(&mut self) -> [&mut Param<S>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param<S>; 2] {
        [&self.weight, &self.bias]
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

pub fn swish<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| v * sigmoid(v))
}

pub fn swish_backward<S: Scalar>(x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (S::one() + v * (S::one() - s))
        })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("swish grad shape")
}

/// 2x2 average pooling; spatial sizes must be even.
pub fn avg_pool2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = x.shape();
    assert!(
        h % 2 == 0 && w % 2 == 0,
        "avg_pool2 needs even spatial size"
    );
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::lit(0.25);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let src = x.data();
    for (p, dst) in out.data_mut().chunks_mut(oh * ow).enumerate() {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let a = plane[2 * y * w + 2 * xx];
                let b = plane[2 * y * w + 2 * xx + 1];
                let cc = plane[(2 * y + 1) * w + 2 * xx];
                let d = plane[(2 * y + 1) * w + 2 * xx + 1];
                dst[y * ow + xx] = (a + b + cc + d) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<S: Scalar>(dy: &Tensor<S>) -> Tensor<S> {
    let [n, c, oh, ow] = dy.shape();
    let (h, w) = (oh * 2, ow * 2);
    let quarter = S::lit(0.25);
    let mut dx = Tensor::zeros([n, c, h, w]);
    let src = dy.data();
    for (p, dst) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let g = &src[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = g[(y / 2) * ow + xx / 2] * quarter;
            }
        }
    }
    dx
}

/// Source taps for half-pixel bilinear x2 upsampling along one axis:
/// output `o` reads `0.75 * in[o/2] + 0.25 * in[neighbour]`, clamped at edges.
fn upsample_taps(len: usize) -> Vec<(usize, usize)> {
    (0..2 * len)
        .map(|o| {
            let i = o / 2;
            let nb = if o % 2 == 0 {
                i.saturating_sub(1)
            } else {
                (i + 1).min(len - 1)
            };
            (i, nb)
        })
        .collect()
}

/// Bilinear x2 upsampling with half-pixel centres (edge-clamped).
pub fn upsample2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let (a, b) = (S::lit(0.75), S::lit(0.25));
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let src = x.data();
    let mut tmp = vec![S::zero(); h * ow];
    for (p, dst) in out.data_mut().chunks_mut(oh * ow).enumerate() {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (o, &(i, nb)) in tx.iter().enumerate() {
                tmp[y * ow + o] = a * plane[y * w + i] + b * plane[y * w + nb];
            }
        }
        for (o, &(i, nb)) in ty.iter().enumerate() {
            for xx in 0..ow {
                dst[o * ow + xx] = a * tmp[i * ow + xx] + b * tmp[nb * ow + xx];
            }
        }
    }
    out
}

pub fn upsample2_backward<S: Scalar>(dy: &Tensor<S>) -> Tensor<S> {
    let [n, c, oh, ow] = dy.shape();
    let (h, w) = (oh / 2, ow / 2);
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let (a, b) = (S::lit(0.75), S::lit(0.25));
    let mut dx = Tensor::zeros([n, c, h, w]);
    let src = dy.data();
    let mut tmp = vec![S::zero(); h * ow];
    for (p, dst) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let g = &src[p * oh * ow..(p + 1) * oh * ow];
        tmp.iter_mut().for_each(|v| *v = S::zero());
        for (o, &(i, nb)) in ty.iter().enumerate() {
            for xx in 0..ow {
                let v = g[o * ow + xx];
                tmp[i * ow + xx] = tmp[i * ow + xx] + a * v;
                tmp[nb * ow + xx] = tmp[nb * ow + xx] + b * v;
            }
        }
        for y in 0..h {
            for (o, &(i, nb)) in tx.iter().enumerate() {
                let v = tmp[y * ow + o];
                dst[y * w + i] = dst[y * w + i] + a * v;
                dst[y * w + nb] = dst[y * w + nb] + b * v;
            }
        }
    }
    dx
}

pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let [n, ca, h, w] = a.shape();
    assert_eq!([n, h, w], [b.n(), b.h(), b.w()], "concat shape mismatch");
    let cb = b.c();
    let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
    for i in 0..n {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Tensor::from_vec([n, ca + cb, h, w], data).expect("concat shape")
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels<S: Scalar>(d: &Tensor<S>, ca: usize) -> (Tensor<S>, Tensor<S>) {
    let [n, c, h, w] = d.shape();
    let hw = h * w;
    let mut a = Vec::with_capacity(n * ca * hw);
    let mut b = Vec::with_capacity(n * (c - ca) * hw);
    for i in 0..n {
        let s = d.sample(i);
        a.extend_from_slice(&s[..ca * hw]);
        b.extend_from_slice(&s[ca * hw..]);
    }
    (
        Tensor::from_vec([n, ca, h, w], a).expect("split shape"),
        Tensor::from_vec([n, c - ca, h, w], b).expect("split shape"),
    )
}

/// Rearranges `[n, c*r*r, h, w]` into `[n, c, h*r, w*r]`:
/// `out[ch][y*r + i][x*r + j] = in[ch*r*r + i*r + j][y][x]`.
pub fn pixel_shuffle<S: Scalar>(x: &Tensor<S>, r: usize) -> Tensor<S> {
    let [n, crr, h, w] = x.shape();
    assert!(crr % (r * r) == 0, "pixel shuffle channel count");
    let c = crr / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let src = x.plane(b, ch * r * r + i * r + j).to_vec();
                    let base = (b * c + ch) * oh * ow;
                    let dst = out.data_mut();
                    for y in 0..h {
                        for xx in 0..w {
                            dst[base + (y * r + i) * ow + xx * r + j] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn pixel_unshuffle<S: Scalar>(y: &Tensor<S>, r: usize) -> Tensor<S> {
    let [n, c, oh, ow] = y.shape();
    let (h, w) = (oh / r, ow / r);
    let mut out = Tensor::zeros([n, c * r * r, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = y.plane(b, ch).to_vec();
            for i in 0..r {
                for j in 0..r {
                    let base = (b * c * r * r + ch * r * r + i * r + j) * h * w;
                    let dst = out.data_mut();
                    for yy in 0..h {
                        for xx in 0..w {
                            dst[base + yy * w + xx] = src[(yy * r + i) * ow + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: [usize; 4], rng: &mut impl Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    /// Direct nested-loop convolution used as an oracle.
    fn conv_naive(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let [n, _, h, w] = x.shape();
        let (k, p) = (conv.k as isize, (conv.k / 2) as isize);
        let mut y = Tensor::zeros([n, conv.cout, h, w]);
        for b in 0..n {
            for co in 0..conv.cout {
                for yy in 0..h as isize {
                    for xx in 0..w as isize {
                        let mut acc = conv.bias.value[co];
                        for ci in 0..conv.cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let (sy, sx) = (yy + ky - p, xx + kx - p);
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    let wi = ((co * conv.cin + ci) * conv.k + ky as usize) * conv.k
                                        + kx as usize;
                                    acc += conv.weight.value[wi]
                                        * x.plane(b, ci)[sy as usize * w + sx as usize];
                                }
                            }
                        }
                        let idx = ((b * conv.cout + co) * h + yy as usize) * w + xx as usize;
                        y.data_mut()[idx] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in [1, 3, 5] {
            let mut conv = Conv2d::<f64>::new(3, 4, k, Init::FanIn, &mut rng);
            conv.bias
                .value
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-1.0..1.0));
            let x = rand_tensor([2, 3, 6, 5], &mut rng);
            let y = conv.forward(&x);
            let oracle = conv_naive(&conv, &x);
            for (a, b) in y.data().iter().zip(oracle.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_and_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, Init::FanIn, &mut rng);
        let x = rand_tensor([2, 2, 5, 4], &mut rng);
        let dy = rand_tensor([2, 3, 5, 4], &mut rng);
        let dx = conv.backward(&x, &dy, true).unwrap();
        // <conv(x) - b, dy> is linear in x, so <dx, x> equals it exactly.
        let mut y = conv.forward(&x);
        for b in 0..2 {
            for co in 0..3 {
                let bias = conv.bias.value[co];
                let hw = 20;
                let start = (b * 3 + co) * hw;
                y.data_mut()[start..start + hw]
                    .iter_mut()
                    .for_each(|v| *v -= bias);
            }
        }
        assert!((dot(&y, &dy) - dot(&dx, &x)).abs() < 1e-10);

        // Weight gradient against finite differences of <conv(x), dy>.
        for idx in [0, 7, 20, 53] {
            let h = 1e-6;
            let orig = conv.weight.value[idx];
            conv.weight.value[idx] = orig + h;
            let up = dot(&conv.forward(&x), &dy);
            conv.weight.value[idx] = orig - h;
            let down = dot(&conv.forward(&x), &dy);
            conv.weight.value[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - conv.weight.grad[idx]).abs() < 1e-6, "w[{idx}]");
        }
        let db0: f64 = (0..2).flat_map(|b| dy.plane(b, 0).to_vec()).sum();
        assert!((conv.bias.grad[0] - db0).abs() < 1e-12);
    }

    #[test]
    fn single_conv_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            Conv2d::<f32>::new(1, 1, 3, Init::FanIn, &mut rng).param_count(),
            10
        );
    }

    #[test]
    fn linear_ops_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor([2, 3, 4, 6], &mut rng);

        let dy = rand_tensor([2, 3, 2, 3], &mut rng);
        assert!((dot(&avg_pool2(&x), &dy) - dot(&x, &avg_pool2_backward(&dy))).abs() < 1e-12);

        let dy = rand_tensor([2, 3, 8, 12], &mut rng);
        assert!((dot(&upsample2(&x), &dy) - dot(&x, &upsample2_backward(&dy))).abs() < 1e-12);

        let x4 = rand_tensor([1, 8, 3, 2], &mut rng);
        let dy = rand_tensor([1, 2, 6, 4], &mut rng);
        assert!(
            (dot(&pixel_shuffle(&x4, 2), &dy) - dot(&x4, &pixel_unshuffle(&dy, 2))).abs() < 1e-12
        );
    }

    #[test]
    fn upsample_half_pixel_weights() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![0.0f64, 4.0]).unwrap();
        let y = upsample2(&x);
        // Columns: [x0, .75x0+.25x1, .25x0+.75x1, x1]
        assert_eq!(y.plane(0, 0)[..4], [0.0, 1.0, 3.0, 4.0]);
        let c = Tensor::full([1, 2, 3, 3], 2.5f64);
        assert!(upsample2(&c)
            .data()
            .iter()
            .all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn pixel_shuffle_index_map() {
        // Four 2x2 channels with distinct values; r = 2 → one 4x4 plane.
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let x = Tensor::from_vec([1, 4, 2, 2], data).unwrap();
        let y = pixel_shuffle(&x, 2);
        assert_eq!(y.shape(), [1, 1, 4, 4]);
        // Hand-written interleaving: out[2y+i][2x+j] = ch(2i+j)[y][x].
        let mut expect = [0.0f64; 16];
        for ch in 0..4 {
            let (i, j) = (ch / 2, ch % 2);
            for yy in 0..2 {
                for xx in 0..2 {
                    expect[(2 * yy + i) * 4 + 2 * xx + j] = (ch * 4 + yy * 2 + xx) as f64;
                }
            }
        }
        assert_eq!(y.data(), &expect);
        let c = Tensor::full([1, 4, 3, 3], 0.7f64);
        assert!(pixel_shuffle(&c, 2).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn swish_grad_matches_fd() {
        let x = Tensor::from_vec([1, 1, 1, 5], vec![-3.0f64, -0.5, 0.0, 0.7, 4.0]).unwrap();
        let ones = Tensor::full([1, 1, 1, 5], 1.0f64);
        let g = swish_backward(&x, &ones);
        for i in 0..5 {
            let v = x.data()[i];
            let f = |t: f64| t / (1.0 + (-t).exp());
            let fd = (f(v + 1e-6) - f(v - 1e-6)) / 2e-6;
            assert!((g.data()[i] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn concat_split_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_tensor([2, 2, 3, 3], &mut rng);
        let b = rand_tensor([2, 3, 3, 3], &mut rng);
        let (a2, b2) = split_channels(&concat_channels(&a, &b), 2);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }
}
