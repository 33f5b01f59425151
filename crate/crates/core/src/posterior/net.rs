//! Minimal fully-connected networks over flat parameter vectors with
//! hand-written reverse-mode differentiation, plus the Adam optimiser used
//! to train them. Flat parameter storage keeps finite-difference checks and
//! optimiser state trivial.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Softplus,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => crate::math::softplus(x),
        }
    }

    fn derivative(&self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Softplus => crate::math::sigmoid(pre),
        }
    }
}

/// Network architecture: layer widths from input to output. Hidden layers
/// use the activation; the output layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpShape {
    pub dims: Vec<usize>,
    pub activation: Activation,
}

/// Forward-pass intermediates needed for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    /// Post-activation values per layer, starting with the input.
    acts: Vec<Vec<f64>>,
    /// Pre-activation values per non-input layer.
    pres: Vec<Vec<f64>>,
}

impl MlpShape {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        Self { dims, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty shape")
    }

    pub fn n_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Fan-in-scaled uniform initialisation; biases start at zero.
    pub fn init_lecun<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.n_params());
        for w in self.dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (3.0 / fan_in as f64).sqrt();
            for _ in 0..fan_out * fan_in {
                params.push(rng.gen_range(-limit..limit));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        params
    }

    /// Forward pass. When `cache` is supplied the intermediates are stored
    /// for a later [`MlpShape::backward`] call.
    pub fn forward(&self, params: &[f64], x: &[f64], mut cache: Option<&mut MlpCache>) -> Vec<f64> {
        debug_assert_eq!(params.len(), self.n_params());
        debug_assert_eq!(x.len(), self.input_dim());
        if let Some(c) = cache.as_deref_mut() {
            c.acts.clear();
            c.pres.clear();
            c.acts.push(x.to_vec());
        }
        let n_layers = self.dims.len() - 1;
        let mut act = x.to_vec();
        let mut offset = 0;
        for (l, w) in self.dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_out * n_in];
            let biases = &params[offset + n_out * n_in..offset + n_out * n_in + n_out];
            offset += n_out * n_in + n_out;
            let mut pre = vec![0.0; n_out];
            for (i, p) in pre.iter_mut().enumerate() {
                let row = &weights[i * n_in..][..n_in];
                *p = row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>() + biases[i];
            }
            let last = l == n_layers - 1;
            let next: Vec<f64> =
                if last { pre.clone() } else { pre.iter().map(|&p| self.activation.apply(p)).collect() };
            if let Some(c) = cache.as_deref_mut() {
                c.pres.push(pre);
                c.acts.push(next.clone());
            }
            act = next;
        }
        act
    }

    /// Accumulate `d loss / d params` into `grad_params` given the loss
    /// gradient with respect to the network output.
    pub fn backward(&self, params: &[f64], cache: &MlpCache, grad_out: &[f64], grad_params: &mut [f64]) {
        debug_assert_eq!(grad_params.len(), self.n_params());
        let n_layers = self.dims.len() - 1;
        let mut layer_offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.dims.windows(2) {
            layer_offsets.push(offset);
            offset += w[1] * w[0] + w[1];
        }
        // delta = gradient wrt the pre-activation of the current layer
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let base = layer_offsets[l];
            let input = &cache.acts[l];
            for i in 0..n_out {
                let gw = &mut grad_params[base + i * n_in..base + (i + 1) * n_in];
                for (g, a) in gw.iter_mut().zip(input) {
                    *g += delta[i] * a;
                }
                grad_params[base + n_out * n_in + i] += delta[i];
            }
            if l == 0 {
                break;
            }
            let weights = &params[base..base + n_out * n_in];
            let mut prev = vec![0.0; n_in];
            for (i, d) in delta.iter().enumerate() {
                let row = &weights[i * n_in..][..n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            let pre_prev = &cache.pres[l - 1];
            for (p, pre) in prev.iter_mut().zip(pre_prev) {
                *p *= self.activation.derivative(*pre);
            }
            delta = prev;
        }
    }
}

/// Adam with decoupled weight decay and a cosine learning-rate schedule
/// decaying to a fixed fraction of the initial rate.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One update step. `decay_mask[i] = true` applies weight decay to the
    /// i-th parameter.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64, decay_mask: &[bool]) {
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / b1c;
            let vhat = self.v[i] / b2c;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            if weight_decay > 0.0 && decay_mask[i] {
                params[i] -= lr * weight_decay * params[i];
            }
        }
    }
}

/// Cosine schedule from `lr0` down to `final_frac * lr0` over `total` steps.
pub fn cosine_lr(lr0: f64, final_frac: f64, step: u64, total: u64) -> f64 {
    let lr_final = final_frac * lr0;
    if total <= 1 {
        return lr0;
    }
    let progress = (step.min(total - 1)) as f64 / (total - 1) as f64;
    lr_final + 0.5 * (lr0 - lr_final) * (1.0 + (std::f64::consts::PI * progress).cos())
}
