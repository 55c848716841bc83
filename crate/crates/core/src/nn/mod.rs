//! Minimal convolutional networks with hand-written reverse mode.
//!
//! Networks are plain layer sequences. Besides the usual backward pass,
//! [`Sequential`] exposes the backward pass *as a function of the weights*
//! so the gradient-penalty term of a critic (which depends on `∂D/∂x`) can be
//! differentiated with respect to the critic parameters exactly.

mod adam;
mod conv;

pub use adam::{Adam, AdamConfig};
pub use conv::{uniform_tensor, Conv, Upsample2};

use sha2::{Digest, Sha256};

use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv),
    Upsample2(Upsample2),
    LeakyRelu(f32),
    Tanh,
}

impl Layer {
    fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Conv(c) => c.forward(x),
            Layer::Upsample2(u) => u.forward(x),
            Layer::LeakyRelu(slope) => x.map(|v| if v > 0.0 { v } else { slope * v }),
            Layer::Tanh => x.map(f32::tanh),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Layer::Conv(_) | Layer::Upsample2(_) => 2,
            _ => 0,
        }
    }
}

/// Per-layer inputs recorded by [`Sequential::forward_cached`]; the last
/// entry is the network output.
#[derive(Clone, Debug)]
pub struct Cache {
    pub activations: Vec<Tensor>,
}

impl Cache {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("cache holds the input at least")
    }
}

/// Gradient buffers aligned with [`Sequential::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<Vec<f32>>);

impl Grads {
    pub fn scale(&mut self, k: f32) {
        self.0.iter_mut().flatten().for_each(|g| *g *= k);
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|g| g.is_finite())
    }

    pub fn flat(&self) -> Vec<f32> {
        self.0.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.layers.iter().fold(x.clone(), |acc, l| l.forward(&acc))
    }

    pub fn forward_cached(&self, x: &Tensor) -> Cache {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap());
            activations.push(next);
        }
        Cache { activations }
    }

    /// Parameter tensors in a fixed order: weight then bias of every
    /// parametrized layer.
    pub fn params(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(c.weight.as_slice());
                    out.push(c.bias.as_slice());
                }
                Layer::Upsample2(u) => {
                    out.push(u.weight.as_slice());
                    out.push(u.bias.as_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                Layer::Upsample2(u) => {
                    out.push(&mut u.weight);
                    out.push(&mut u.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.params().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Little-endian bytes of all parameters in [`Sequential::params`] order.
    pub fn param_bytes(&self) -> Vec<u8> {
        self.params()
            .iter()
            .flat_map(|p| p.iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    pub fn param_hash(&self) -> String {
        hex::encode(Sha256::digest(self.param_bytes()))
    }

    /// Back-propagates `d_out` through the cached pass, accumulating
    /// parameter gradients into `grads`. Returns `∂L/∂input` when asked.
    pub fn backward(&self, cache: &Cache, d_out: Tensor, grads: &mut Grads, want_input_grad: bool) -> Option<Tensor> {
        let mut g = d_out;
        let mut slot = grads.0.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[i];
            let output = &cache.activations[i + 1];
            slot -= layer.param_count();
            let last = i == 0 && !want_input_grad;
            match layer {
                Layer::Conv(c) => {
                    let (dw, db) = split_pair(&mut grads.0, slot);
                    c.accumulate_param_grad(input, &g, dw, Some(db));
                    if last {
                        return None;
                    }
                    g = c.input_grad(&g);
                }
                Layer::Upsample2(u) => {
                    let (dw, db) = split_pair(&mut grads.0, slot);
                    u.accumulate_param_grad(input, &g, dw, db);
                    if last {
                        return None;
                    }
                    g = u.input_grad(&g);
                }
                Layer::LeakyRelu(slope) => {
                    g.data_mut()
                        .iter_mut()
                        .zip(input.data())
                        .for_each(|(d, &x)| if x <= 0.0 { *d *= slope });
                }
                Layer::Tanh => {
                    g.data_mut()
                        .iter_mut()
                        .zip(output.data())
                        .for_each(|(d, &y)| *d *= 1.0 - y * y);
                }
            }
        }
        want_input_grad.then_some(g)
    }

    /// Input gradient of a piecewise-linear network (convs and leaky ReLUs)
    /// for output gradient `d_out`, keeping the upstream gradient seen at the
    /// output of every layer. `trace[i]` is `∂L/∂(output of layer i)`.
    pub fn input_grad_traced(&self, cache: &Cache, d_out: Tensor) -> (Tensor, Vec<Tensor>) {
        let mut trace = vec![Tensor::zeros([0, 0, 0, 0]); self.layers.len()];
        let mut g = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            trace[i] = g.clone();
            let input = &cache.activations[i];
            g = match layer {
                Layer::Conv(c) => c.input_grad(&g),
                Layer::LeakyRelu(slope) => {
                    let mut g = g;
                    g.data_mut()
                        .iter_mut()
                        .zip(input.data())
                        .for_each(|(d, &x)| if x <= 0.0 { *d *= slope });
                    g
                }
                Layer::Upsample2(_) | Layer::Tanh => {
                    panic!("traced input gradients support conv and leaky-relu layers only")
                }
            };
        }
        (g, trace)
    }

    /// Gradient with respect to the parameters of `P(∂L/∂x)` where the input
    /// gradient came from [`Sequential::input_grad_traced`] and
    /// `d_input_grad = ∂P/∂(∂L/∂x)`. The backward pass is linear in the
    /// upstream gradient and in each weight tensor once the activation masks
    /// are fixed, so the adjoint runs forward through the layers. Biases do
    /// not enter the input gradient.
    pub fn accumulate_input_grad_param_grad(
        &self,
        cache: &Cache,
        trace: &[Tensor],
        d_input_grad: Tensor,
        grads: &mut Grads,
    ) {
        let mut r = d_input_grad;
        let mut slot = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = &cache.activations[i];
            match layer {
                Layer::Conv(c) => {
                    let (dw, _) = split_pair(&mut grads.0, slot);
                    c.accumulate_param_grad(&r, &trace[i], dw, None);
                    if i + 1 < self.layers.len() {
                        r = c.linear(&r);
                    }
                }
                Layer::LeakyRelu(slope) => {
                    r.data_mut()
                        .iter_mut()
                        .zip(input.data())
                        .for_each(|(d, &x)| if x <= 0.0 { *d *= slope });
                }
                Layer::Upsample2(_) | Layer::Tanh => {
                    panic!("traced input gradients support conv and leaky-relu layers only")
                }
            }
            slot += layer.param_count();
        }
    }
}

fn split_pair(v: &mut [Vec<f32>], at: usize) -> (&mut [f32], &mut [f32]) {
    let (a, b) = v[at..at + 2].split_at_mut(1);
    (&mut a[0], &mut b[0])
}
