use serde::{Deserialize, Serialize};

use super::NoiseEmbedding;
use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec, Scalar, Tensor, UNetSpec};

/// Anything that estimates the noise in `x_t` given the conditioning stack.
pub trait Denoiser: Sync {
    /// `alphas` holds one signal variance per batch element.
    fn predict_eps(
        &self,
        x_t: &Tensor<f32>,
        cond: &Tensor<f32>,
        alphas: &[f64],
    ) -> Result<Tensor<f32>>;
}

/// What the network's raw output represents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputParam {
    /// The output is the noise itself.
    Noise,
    /// The output is `v = sqrt(a) eps - sqrt(1 - a) x0`, turned into a noise
    /// estimate as `sqrt(1 - a) x_t + sqrt(a) v`. Keeps the implied `x0`
    /// estimate bounded when the signal rate is tiny.
    #[default]
    Velocity,
}

/// Channel stack `[x_t | conditioning | embedding(1 - alpha)]`.
pub fn assemble_input<S: Scalar>(
    x_t: &Tensor<S>,
    cond: &Tensor<S>,
    alphas: &[f64],
    embedding: &NoiseEmbedding,
) -> Result<Tensor<S>> {
    let [n, _, h, w] = x_t.shape();
    x_t.check_shape([n, 1, h, w], "noisy batch")?;
    cond.check_shape([n, 4, h, w], "conditioning stack")?;
    if alphas.len() != n {
        return Err(Error::Shape(format!(
            "{} alphas for batch of {n}",
            alphas.len()
        )));
    }
    let hw = h * w;
    let c = 5 + embedding.channels();
    let mut data = Vec::with_capacity(n * c * hw);
    for (i, &alpha) in alphas.iter().enumerate() {
        data.extend_from_slice(x_t.sample(i));
        data.extend_from_slice(cond.sample(i));
        for v in embedding.embed(1.0 - alpha) {
            data.extend(std::iter::repeat_n(S::lit(v), hw));
        }
    }
    Tensor::from_vec([n, c, h, w], data)
}

/// U-Net denoiser together with its input embedding and output convention.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionNet<S> {
    pub model: Model<S>,
    pub embedding: NoiseEmbedding,
    pub output: OutputParam,
}

impl<S: Scalar> DiffusionNet<S> {
    pub fn new(spec: UNetSpec, seed: u64, output: OutputParam) -> Result<Self> {
        let embedding = NoiseEmbedding::standard(spec.embed_freqs);
        let model = Model::new(&ModelSpec::DiffusionUnet(spec), seed)?;
        Ok(DiffusionNet {
            model,
            embedding,
            output,
        })
    }

    pub fn from_parts(
        model: Model<S>,
        embedding: NoiseEmbedding,
        output: OutputParam,
    ) -> Result<Self> {
        match model.spec() {
            ModelSpec::DiffusionUnet(s) if 2 * s.embed_freqs == embedding.channels() => {
                Ok(DiffusionNet {
                    model,
                    embedding,
                    output,
                })
            }
            other => Err(Error::Config(format!(
                "model {:?} does not match a {}-channel embedding",
                other.kind(),
                embedding.channels()
            ))),
        }
    }

    /// Raw network output to noise estimate.
    pub(crate) fn to_eps(&self, x_t: &Tensor<S>, raw: &Tensor<S>, alphas: &[f64]) -> Tensor<S> {
        match self.output {
            OutputParam::Noise => raw.clone(),
            OutputParam::Velocity => {
                let mut out = raw.clone();
                for (i, &a) in alphas.iter().enumerate() {
                    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
                    for (o, &x) in out.sample_mut(i).iter_mut().zip(x_t.sample(i)) {
                        *o = S::lit(sn * x.f64() + sa * o.f64());
                    }
                }
                out
            }
        }
    }

    /// Gradient of the loss w.r.t. the raw output given its gradient w.r.t.
    /// the noise estimate.
    pub(crate) fn eps_grad_to_raw(&self, d_eps: &mut Tensor<S>, alphas: &[f64]) {
        if self.output == OutputParam::Velocity {
            for (i, &a) in alphas.iter().enumerate() {
                let sa = S::lit(a.sqrt());
                d_eps.sample_mut(i).iter_mut().for_each(|g| *g = *g * sa);
            }
        }
    }

    pub fn eps_hat(&self, x_t: &Tensor<S>, cond: &Tensor<S>, alphas: &[f64]) -> Result<Tensor<S>> {
        let x = assemble_input(x_t, cond, alphas, &self.embedding)?;
        let raw = self.model.forward(&x)?;
        Ok(self.to_eps(x_t, &raw, alphas))
    }
}

impl Denoiser for DiffusionNet<f32> {
    fn predict_eps(
        &self,
        x_t: &Tensor<f32>,
        cond: &Tensor<f32>,
        alphas: &[f64],
    ) -> Result<Tensor<f32>> {
        self.eps_hat(x_t, cond, alphas)
    }
}

/// Returns the exact noise that separates `x_t` from known targets. Batch
/// element `i` uses target `i % targets.n()`, so ensembles folded into the
/// batch dimension member-major line up with their targets.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    targets: Tensor<f32>,
}

impl OracleDenoiser {
    pub fn new(targets: Tensor<f32>) -> Result<Self> {
        if targets.c() != 1 || targets.n() == 0 {
            return Err(Error::Shape(
                "oracle targets must be [n, 1, h, w] with n > 0".into(),
            ));
        }
        Ok(OracleDenoiser { targets })
    }
}

impl Denoiser for OracleDenoiser {
    fn predict_eps(
        &self,
        x_t: &Tensor<f32>,
        _cond: &Tensor<f32>,
        alphas: &[f64],
    ) -> Result<Tensor<f32>> {
        let [n, _, h, w] = x_t.shape();
        x_t.check_shape([n, 1, self.targets.h(), self.targets.w()], "oracle input")?;
        let mut out = Tensor::zeros([n, 1, h, w]);
        for (i, &a) in alphas.iter().enumerate().take(n) {
            if a >= 1.0 {
                continue;
            }
            let x0 = self.targets.sample(i % self.targets.n());
            let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
            for ((o, &x), &t) in out.sample_mut(i).iter_mut().zip(x_t.sample(i)).zip(x0) {
                *o = ((x as f64 - sa * t as f64) / sn) as f32;
            }
        }
        Ok(out)
    }
}

/// Always predicts zero noise.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict_eps(
        &self,
        x_t: &Tensor<f32>,
        _cond: &Tensor<f32>,
        _alphas: &[f64],
    ) -> Result<Tensor<f32>> {
        Ok(Tensor::zeros(x_t.shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_stack_layout() {
        let emb = NoiseEmbedding::standard(2);
        let x = Tensor::full([2, 1, 2, 2], 7.0f64);
        let cond = Tensor::from_vec([2, 4, 2, 2], (0..32).map(f64::from).collect()).unwrap();
        let stacked = assemble_input(&x, &cond, &[1.0, 0.36], &emb).unwrap();
        assert_eq!(stacked.shape(), [2, 9, 2, 2]);
        assert_eq!(stacked.plane(1, 0), &[7.0; 4]);
        assert_eq!(stacked.plane(1, 1), &[16.0, 17.0, 18.0, 19.0]);
        // alpha = 1 -> variance 0 -> sines 0, cosines 1.
        assert_eq!(stacked.plane(0, 5), &[0.0; 4]);
        assert_eq!(stacked.plane(0, 8), &[1.0; 4]);
        let code = emb.embed(0.64);
        assert!((stacked.plane(1, 6)[3] - code[1]).abs() < 1e-15);
    }

    #[test]
    fn zero_init_velocity_net_scales_input() {
        let net = DiffusionNet::<f32>::new(UNetSpec::desk(), 0, OutputParam::Velocity).unwrap();
        let x = Tensor::full([1, 1, 16, 16], 2.0f32);
        let cond = Tensor::full([1, 4, 16, 16], 0.5f32);
        let eps = net.eps_hat(&x, &cond, &[0.36]).unwrap();
        assert!(eps.data().iter().all(|&v| (v - 1.6).abs() < 1e-6));
    }
}
