use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use windsr_core::diffusion::{diffusion_loss, DiffusionNet, LossKind, OutputParam};
use windsr_core::models::layers::Conv2d;
use windsr_core::models::{
    parameter_count, EdsrSpec, EspcnSpec, Model, ModelSpec, Tensor, UNetSpec, T0_CHANNEL,
};

fn randn(rng: &mut ChaCha8Rng, shape: [usize; 4], scale: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Adds small noise to every weight so zero-initialised heads do not hide
/// the gradients of everything upstream.
fn jitter<S: windsr_core::models::Scalar>(model: &mut Model<S>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut() {
        for v in p.value.iter_mut() {
            *v = S::lit(v.f64() + scale * rng.sample::<f64, _>(StandardNormal));
        }
    }
}

fn flat_index(model: &Model<f64>, k: usize) -> (usize, usize) {
    let mut k = k;
    for (i, len) in model.param_shapes().into_iter().enumerate() {
        if k < len {
            return (i, k);
        }
        k -= len;
    }
    unreachable!()
}

fn nudge(model: &mut Model<f64>, at: (usize, usize), delta: f64) {
    let mut params = model.params_mut();
    params[at.0].value[at.1] += delta;
}

/// Relative errors of analytic vs central-difference gradients on ten
/// random parameters of `model(state)`. `loss` must not depend on stored
/// gradients.
fn gradcheck<T>(
    state: &mut T,
    model: fn(&mut T) -> &mut Model<f64>,
    seed: u64,
    mut loss: impl FnMut(&mut T) -> f64,
) -> Vec<f64> {
    model(state).zero_grad();
    loss(state);
    let analytic: Vec<f64> = model(state)
        .params()
        .iter()
        .flat_map(|p| p.grad.iter().copied())
        .collect();
    let total = model(state).parameter_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    (0..10)
        .map(|_| {
            let k = rng.random_range(0..total);
            let at = flat_index(model(state), k);
            nudge(model(state), at, h);
            let up = loss(state);
            nudge(model(state), at, -2.0 * h);
            let down = loss(state);
            nudge(model(state), at, h);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k];
            (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7)
        })
        .collect()
}

fn itself(m: &mut Model<f64>) -> &mut Model<f64> {
    m
}

fn regression_loss(x: &Tensor<f64>, target: &Tensor<f64>) -> impl FnMut(&mut Model<f64>) -> f64 {
    let (x, target) = (x.clone(), target.clone());
    move |m: &mut Model<f64>| {
        let (y, cache) = m.forward_train(&x).unwrap();
        let (value, grad) = LossKind::Squared.eval(&y, &target).unwrap();
        m.backward(cache, &grad);
        value
    }
}

#[test]
fn gradcheck_desk_diffusion_unet() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for output in [OutputParam::Velocity, OutputParam::Noise] {
        let mut net = DiffusionNet::<f64>::new(UNetSpec::desk(), 3, output).unwrap();
        jitter(&mut net.model, 4, 0.05);
        let x0 = randn(&mut rng, [2, 1, 16, 16], 0.3);
        let cond = randn(&mut rng, [2, 4, 16, 16], 0.3);
        let eps = randn(&mut rng, [2, 1, 16, 16], 1.0);
        let alphas = [0.36, 0.84];
        let errs = gradcheck(
            &mut net,
            |n| &mut n.model,
            5,
            |n| diffusion_loss(n, &x0, &cond, &alphas, &eps, LossKind::Squared).unwrap(),
        );
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{output:?}: relative errors {errs:?}");
    }
}

#[test]
fn gradcheck_regressors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let runet = ModelSpec::runet(UNetSpec::desk());
    let cases = [
        (runet, [2, 4, 16, 16], [2, 1, 16, 16]),
        (
            ModelSpec::Espcn(EspcnSpec {
                upscale: 2,
                features: [8, 6],
            }),
            [2, 4, 6, 6],
            [2, 1, 12, 12],
        ),
        (
            ModelSpec::Edsr(EdsrSpec {
                upscale: 2,
                features: 6,
                blocks: 2,
                res_scale: 0.1,
            }),
            [2, 4, 6, 6],
            [2, 1, 12, 12],
        ),
    ];
    for (spec, xs, ys) in cases {
        let mut m = Model::<f64>::new(&spec, 7).unwrap();
        jitter(&mut m, 8, 0.05);
        let x = randn(&mut rng, xs, 0.5);
        let t = randn(&mut rng, ys, 0.5);
        let errs = gradcheck(&mut m, itself, 9, regression_loss(&x, &t));
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{:?}: relative errors {errs:?}", spec.kind());
    }
}

#[test]
fn shape_totality() {
    let desk = UNetSpec::desk();
    for size in [32, 64, 128] {
        let net = DiffusionNet::<f32>::new(desk.clone(), 0, OutputParam::Velocity).unwrap();
        let x = Tensor::full([1, 1, size, size], 0.1f32);
        let cond = Tensor::full([1, 4, size, size], 0.2f32);
        assert_eq!(
            net.eps_hat(&x, &cond, &[0.5]).unwrap().shape(),
            [1, 1, size, size]
        );

        let runet = Model::<f32>::new(&ModelSpec::runet(desk.clone()), 0).unwrap();
        assert_eq!(runet.forward(&cond).unwrap().shape(), [1, 1, size, size]);

        for r in [2, 4] {
            let lr = Tensor::full([2, 4, size / r, size / r], 0.3f32);
            let espcn = Model::<f32>::new(&ModelSpec::Espcn(EspcnSpec::new(r)), 0).unwrap();
            assert_eq!(espcn.forward(&lr).unwrap().shape(), [2, 1, size, size]);
            let edsr = Model::<f32>::new(&ModelSpec::Edsr(EdsrSpec::new(r)), 0).unwrap();
            assert_eq!(edsr.forward(&lr).unwrap().shape(), [2, 1, size, size]);
        }
    }
}

#[test]
fn unet_rejects_indivisible_sizes() {
    let runet = Model::<f32>::new(&ModelSpec::runet(UNetSpec::desk()), 0).unwrap();
    assert!(runet.forward(&Tensor::zeros([1, 4, 36, 36])).is_err());
    assert!(runet.forward(&Tensor::zeros([1, 3, 32, 32])).is_err());
}

#[test]
fn full_size_unet_parameter_count() {
    let n = parameter_count(&ModelSpec::DiffusionUnet(UNetSpec::full()));
    assert!((15_000_000..=25_000_000).contains(&n), "{n}");
    let desk = parameter_count(&ModelSpec::DiffusionUnet(UNetSpec::desk()));
    let built = Model::<f32>::new(&ModelSpec::DiffusionUnet(UNetSpec::desk()), 0).unwrap();
    assert_eq!(built.parameter_count(), desk);
}

#[test]
fn diffusion_head_starts_at_zero() {
    let m = Model::<f32>::new(&ModelSpec::DiffusionUnet(UNetSpec::desk()), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = randn(&mut rng, [2, 37, 32, 32], 1.0).cast::<f32>();
    assert!(m.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn runet_mirrors_diffusion_body() {
    let d = match Model::<f32>::new(&ModelSpec::DiffusionUnet(UNetSpec::desk()), 0).unwrap() {
        Model::DiffusionUnet(u) => u,
        _ => unreachable!(),
    };
    let r = match Model::<f32>::new(&ModelSpec::runet(UNetSpec::desk()), 0).unwrap() {
        Model::Runet(u) => u,
        _ => unreachable!(),
    };
    assert_eq!(d.conv_count(), r.conv_count());
    // Only the 1x1 stem differs: 1 noisy + 32 embedding input channels.
    let c0 = UNetSpec::desk().channels[0];
    assert_eq!(d.params().len(), r.params().len());
    let diff: usize = d.params().iter().map(|p| p.len()).sum::<usize>()
        - r.params().iter().map(|p| p.len()).sum::<usize>();
    assert_eq!(diff, 33 * c0);
}

#[test]
fn runet_constant_input_gives_constant_output() {
    let m = Model::<f32>::new(&ModelSpec::runet(UNetSpec::desk()), 1).unwrap();
    let mut x = Tensor::full([1, 4, 32, 32], 0.25f32);
    x.sample_mut(0)[T0_CHANNEL * 1024..(T0_CHANNEL + 1) * 1024].fill(0.6);
    let y = m.forward(&x).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.6));
}

#[test]
fn edsr_zero_residual_scale_skips_trunk() {
    let spec = EdsrSpec {
        upscale: 2,
        features: 8,
        blocks: 3,
        res_scale: 0.0,
    };
    let mut m = Model::<f64>::new(&ModelSpec::Edsr(spec), 2).unwrap();
    jitter(&mut m, 3, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&mut rng, [1, 4, 6, 6], 1.0);
    let y = m.forward(&x).unwrap();
    let Model::Edsr(e) = &mut m else {
        unreachable!()
    };
    e.blocks.clear();
    let skip = m.forward(&x).unwrap();
    assert_eq!(y, skip);
}

fn conv_oracle(c: &Conv2d<f64>, x: &[Vec<f64>], h: usize, w: usize) -> Vec<Vec<f64>> {
    let (k, r) = (c.k, (c.k / 2) as isize);
    (0..c.cout)
        .map(|o| {
            let mut out = vec![c.bias.value[o]; h * w];
            for i in 0..h {
                for j in 0..w {
                    for (ci, plane) in x.iter().enumerate() {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (ii, jj) =
                                    (i as isize + ky as isize - r, j as isize + kx as isize - r);
                                if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                    continue;
                                }
                                let wt = c.weight.value[((o * c.cin + ci) * k + ky) * k + kx];
                                out[i * w + j] += wt * plane[ii as usize * w + jj as usize];
                            }
                        }
                    }
                }
            }
            out
        })
        .collect()
}

fn swish_planes(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|p| p.iter().map(|&v| v / (1.0 + (-v).exp())).collect())
        .collect()
}

fn add_planes(a: &[Vec<f64>], b: &[Vec<f64>], k: f64) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(p, q)| p.iter().zip(q).map(|(u, v)| u + k * v).collect())
        .collect()
}

#[test]
fn edsr_single_block_matches_scalar_oracle() {
    let spec = EdsrSpec {
        upscale: 1,
        features: 2,
        blocks: 1,
        res_scale: 0.1,
    };
    let mut m = Model::<f64>::new(&ModelSpec::Edsr(spec.clone()), 0).unwrap();
    // Hand-set weights: a fixed ramp through every parameter.
    let mut t = 0usize;
    for p in m.params_mut() {
        for v in p.value.iter_mut() {
            *v = ((t * 37 % 23) as f64 - 11.0) / 40.0;
            t += 1;
        }
    }
    let x_vals: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
    let x = Tensor::from_vec([1, 4, 2, 2], x_vals.clone()).unwrap();
    let y = m.forward(&x).unwrap();

    let Model::Edsr(e) = &m else { unreachable!() };
    let planes: Vec<Vec<f64>> = x_vals.chunks(4).map(<[f64]>::to_vec).collect();
    let feat = conv_oracle(&e.head, &planes, 2, 2);
    let b = &e.blocks[0];
    let branch = conv_oracle(
        &b.conv2,
        &swish_planes(&conv_oracle(&b.conv1, &feat, 2, 2)),
        2,
        2,
    );
    let h = add_planes(&feat, &branch, spec.res_scale);
    let t = add_planes(&conv_oracle(&e.trunk, &h, 2, 2), &feat, 1.0);
    let u = conv_oracle(&e.upsample, &t, 2, 2);
    let out = conv_oracle(&e.tail, &swish_planes(&u), 2, 2);
    for (a, b) in y.data().iter().zip(&out[0]) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

fn shift_cols(t: &Tensor<f32>, by: usize) -> Tensor<f32> {
    let [n, c, h, w] = t.shape();
    let mut out = Tensor::zeros([n, c, h, w]);
    for i in 0..n {
        for ch in 0..c {
            let src = t.plane(i, ch).to_vec();
            let dst = &mut out.sample_mut(i)[ch * h * w..(ch + 1) * h * w];
            for r in 0..h {
                for col in by..w {
                    dst[r * w + col] = src[r * w + col - by];
                }
            }
        }
    }
    out
}

fn assert_interior_shift(a: &Tensor<f32>, b: &Tensor<f32>, by: usize, margin: usize) {
    let [_, _, h, w] = a.shape();
    let (pa, pb) = (a.plane(0, 0), b.plane(0, 0));
    for r in margin..h - margin {
        for c in margin + by..w - margin {
            let (u, v) = (pa[r * w + c - by], pb[r * w + c]);
            assert!((u - v).abs() < 1e-5, "({r},{c}): {u} vs {v}");
        }
    }
}

#[test]
fn conv_trunks_are_translation_covariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = randn(&mut rng, [1, 4, 24, 24], 1.0).cast::<f32>();
    let xs = shift_cols(&x, 1);

    let mut espcn = Model::<f32>::new(&ModelSpec::Espcn(EspcnSpec::new(2)), 0).unwrap();
    jitter(&mut espcn, 1, 0.1);
    let (y, ys) = (espcn.forward(&x).unwrap(), espcn.forward(&xs).unwrap());
    // Receptive radius 4 low-res cells, plus the shifted-in column.
    assert_interior_shift(&y, &ys, 2, 2 * 6);

    let mut edsr = Model::<f32>::new(
        &ModelSpec::Edsr(EdsrSpec {
            upscale: 2,
            features: 8,
            blocks: 2,
            res_scale: 0.1,
        }),
        0,
    )
    .unwrap();
    jitter(&mut edsr, 2, 0.1);
    let (y, ys) = (edsr.forward(&x).unwrap(), edsr.forward(&xs).unwrap());
    assert_interior_shift(&y, &ys, 2, 2 * 9);
}

#[test]
fn inference_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = randn(&mut rng, [2, 4, 16, 16], 1.0).cast::<f32>();
    let mut m = Model::<f32>::new(&ModelSpec::runet(UNetSpec::desk()), 3).unwrap();
    jitter(&mut m, 4, 0.05);
    assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
    assert_eq!(
        Model::<f32>::new(&ModelSpec::runet(UNetSpec::desk()), 3).unwrap(),
        Model::new(&ModelSpec::runet(UNetSpec::desk()), 3).unwrap()
    );
}
