//! Small dense feed-forward network with reverse-mode gradients and Adam.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer activation; the output layer is linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Softplus => {
                if z > 30.0 {
                    z
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative from the pre-activation `z` and the output `h`.
    fn deriv(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

/// Parameters are stored flat, layer by layer: weights (row-major
/// `out x in`) followed by biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Per-layer pre-activations and outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `outs[0]` is the input.
    outs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.outs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut dyn RngCore) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("MLP layer sizes must be >= 2 nonzero entries, got {sizes:?}")));
        }
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                params.push(rng.random_range(-bound..bound));
            }
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Ok(Self { sizes: sizes.to_vec(), activation, params })
    }

    pub fn from_params(sizes: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("MLP layer sizes must be >= 2 nonzero entries, got {sizes:?}")));
        }
        if params.len() != param_count(sizes) {
            return Err(Error::Shape(format!("MLP {sizes:?} needs {} parameters, got {}", param_count(sizes), params.len())));
        }
        Ok(Self { sizes: sizes.to_vec(), activation, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let (wts, rest) = self.params[off..].split_at(n_in * n_out);
            let bias = &rest[..n_out];
            let mut z: Vec<f64> = (0..n_out)
                .map(|o| bias[o] + wts[o * n_in..(o + 1) * n_in].iter().zip(&h).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            if l < last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            h = z;
            off += n_in * n_out + n_out;
        }
        h
    }

    pub fn forward_cached(&self, x: &[f64]) -> MlpCache {
        let mut outs = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.sizes.len() - 1);
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let (wts, rest) = self.params[off..].split_at(n_in * n_out);
            let bias = &rest[..n_out];
            let h = &outs[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| bias[o] + wts[o * n_in..(o + 1) * n_in].iter().zip(h).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let out = if l < last { z.iter().map(|&v| self.activation.apply(v)).collect() } else { z.clone() };
            pre.push(z);
            outs.push(out);
            off += n_in * n_out + n_out;
        }
        MlpCache { outs, pre }
    }

    /// Reverse pass for the loss with output gradient `dout`. Parameter
    /// gradients are added into `grad`; the input gradient is returned.
    pub fn backward(&self, cache: &MlpCache, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = dout.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l < n_layers - 1 {
                for (o, d) in delta.iter_mut().enumerate() {
                    *d *= self.activation.deriv(cache.pre[l][o], cache.outs[l + 1][o]);
                }
            }
            let off = offsets[l];
            let h = &cache.outs[l];
            for o in 0..n_out {
                let g = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (gi, hi) in g.iter_mut().zip(h) {
                    *gi += delta[o] * hi;
                }
                grad[off + n_in * n_out + o] += delta[o];
            }
            let wts = &self.params[off..off + n_in * n_out];
            let mut below = vec![0.0; n_in];
            for o in 0..n_out {
                for (i, b) in below.iter_mut().enumerate() {
                    *b += wts[o * n_in + i] * delta[o];
                }
            }
            delta = below;
        }
        delta
    }

    /// `self <- (1 - rate) self + rate source`.
    pub fn polyak_from(&mut self, source: &Mlp, rate: f64) {
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = (1.0 - rate) * *t + rate * s;
        }
    }
}

/// Adam optimiser state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}
