use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Conv, Layer, Sequential};
use crate::relu_field::CHANNELS;
use crate::seed::Rng;
use crate::tensor::Tensor;

/// A scalar-valued function of a patch with an input gradient.
pub trait Critic {
    fn score(&self, x: &Tensor) -> f64;
    fn input_grad(&self, x: &Tensor) -> Tensor;
}

/// Convolutions and leaky ReLUs ending in one channel, averaged over space.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchCritic {
    pub net: Sequential,
}

impl PatchCritic {
    /// `layers` convolutions of the given kernel; 2D critics use `[1, 3, 3]`.
    pub fn new(in_ch: usize, width: usize, layers: usize, kernel: [usize; 3], rng: &mut Rng) -> Self {
        assert!(layers >= 2);
        let mut net = Vec::new();
        let mut ch = in_ch;
        for _ in 0..layers - 1 {
            net.push(Layer::Conv(Conv::new(ch, width, kernel, 1.0, rng)));
            net.push(Layer::LeakyRelu(0.2));
            ch = width;
        }
        net.push(Layer::Conv(Conv::new(ch, 1, kernel, 1.0, rng)));
        PatchCritic {
            net: Sequential::new(net),
        }
    }

    fn mean_seed(x: &Tensor) -> Tensor {
        let [d, h, w] = x.spatial();
        Tensor::filled([1, d, h, w], 1.0 / (d * h * w) as f32)
    }
}

impl Critic for PatchCritic {
    fn score(&self, x: &Tensor) -> f64 {
        self.net.forward(x).mean()
    }

    fn input_grad(&self, x: &Tensor) -> Tensor {
        let cache = self.net.forward_cached(x);
        self.net.input_grad_traced(&cache, Self::mean_seed(x)).0
    }
}

/// The 2D image critic and the 3D grid critic of one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticPair {
    pub critic2d: PatchCritic,
    pub critic3d: PatchCritic,
}

impl CriticPair {
    pub fn new(width: usize, layers: usize, rng: &mut Rng) -> Self {
        CriticPair {
            critic2d: PatchCritic::new(3, width, layers, [1, 3, 3], rng),
            critic3d: PatchCritic::new(CHANNELS, width, layers, [3, 3, 3], rng),
        }
    }
}

fn check_batches(real: &[Tensor], fake: &[Tensor]) -> Result<()> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::InvalidArgument("critic batches must be non-empty".into()));
    }
    if real.len() != fake.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} real patches but {} fake patches",
            real.len(),
            fake.len()
        )));
    }
    let shape = real[0].shape();
    if real.iter().chain(fake).any(|t| t.shape() != shape) {
        return Err(Error::ShapeMismatch("all patches must share one shape".into()));
    }
    Ok(())
}

fn norm(t: &Tensor) -> f64 {
    t.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
}

fn interpolate(real: &Tensor, fake: &Tensor, eps: f32) -> Tensor {
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .map(|(&r, &f)| eps * r + (1.0 - eps) * f)
        .collect();
    Tensor::from_vec(real.shape(), data).expect("same shape")
}

/// WGAN-GP critic objective `mean D(fake) - mean D(real) + λ·GP`, the
/// penalty evaluated at uniform interpolates of the real/fake pairs.
pub fn critic_loss_wgan(
    critic: &dyn Critic,
    real: &[Tensor],
    fake: &[Tensor],
    gp_lambda: f64,
    rng: &mut Rng,
) -> Result<f64> {
    check_batches(real, fake)?;
    let n = real.len() as f64;
    let w_term = fake.iter().map(|x| critic.score(x)).sum::<f64>() / n
        - real.iter().map(|x| critic.score(x)).sum::<f64>() / n;
    let mut gp = 0.0;
    for (r, f) in real.iter().zip(fake) {
        let x_hat = interpolate(r, f, rng.random::<f32>());
        gp += (norm(&critic.input_grad(&x_hat)) - 1.0).powi(2);
    }
    Ok(w_term + gp_lambda * gp / n)
}

/// `-mean D(fake)`.
pub fn generator_adv_loss(critic: &dyn Critic, fake: &[Tensor]) -> Result<f64> {
    if fake.is_empty() {
        return Err(Error::InvalidArgument("fake batch must be non-empty".into()));
    }
    Ok(-fake.iter().map(|x| critic.score(x)).sum::<f64>() / fake.len() as f64)
}

/// One Adam update of `critic` on the WGAN-GP objective. Returns the loss
/// before the update; draws the interpolation weights from `rng` in the
/// same order as [`critic_loss_wgan`].
pub fn critic_step(
    critic: &mut PatchCritic,
    adam: &mut Adam,
    real: &[Tensor],
    fake: &[Tensor],
    gp_lambda: f64,
    rng: &mut Rng,
) -> Result<f64> {
    check_batches(real, fake)?;
    let n = real.len() as f32;
    let net = &critic.net;
    let mut grads = net.zero_grads();
    let mut loss = 0.0;
    for (r, f) in real.iter().zip(fake) {
        let seed = PatchCritic::mean_seed(r);
        let cf = net.forward_cached(f);
        loss += cf.output().mean();
        let mut d = seed.clone();
        d.scale(1.0 / n);
        net.backward(&cf, d, &mut grads, false);
        let cr = net.forward_cached(r);
        loss -= cr.output().mean();
        let mut d = seed.clone();
        d.scale(-1.0 / n);
        net.backward(&cr, d, &mut grads, false);
    }
    for (r, f) in real.iter().zip(fake) {
        let x_hat = interpolate(r, f, rng.random::<f32>());
        let cache = net.forward_cached(&x_hat);
        let (gx, trace) = net.input_grad_traced(&cache, PatchCritic::mean_seed(r));
        let g_norm = norm(&gx);
        loss += gp_lambda * (g_norm - 1.0).powi(2) / n as f64;
        if g_norm > 0.0 {
            let k = (gp_lambda * 2.0 * (g_norm - 1.0) / g_norm / n as f64) as f32;
            net.accumulate_input_grad_param_grad(&cache, &trace, gx.map(|v| k * v), &mut grads);
        }
    }
    if !grads.is_finite() {
        return Err(Error::NumericalAbort("non-finite critic gradient".into()));
    }
    adam.step(&mut critic.net.params_mut(), &grads.0);
    Ok(loss)
}

pub fn critic_optimizer(critic: &PatchCritic, cfg: AdamConfig) -> Adam {
    Adam::new(cfg, critic.net.params().iter().map(|p| p.len()))
}
