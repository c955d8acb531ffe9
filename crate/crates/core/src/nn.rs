//! One-hidden-layer tanh network with hand-written reverse-mode gradients,
//! plus the AdamW optimizer used to train every learned component.
//!
//! Parameters live in one flat vector so optimizers, serializers and
//! finite-difference checks can treat every model uniformly. Layout:
//!
//! ```text
//! [ w1 (hidden × n_in, row-major) | b1 (hidden) | w2 (n_out × hidden) | b2 (n_out) ]
//! ```

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the output layer is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    /// All output weights and biases zero: a softmax head starts uniform and
    /// a scalar head starts at zero.
    #[default]
    Zero,
    /// Gaussian scaled by `1/sqrt(hidden)`, like the hidden layer.
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub n_in: usize,
    pub hidden: usize,
    pub n_out: usize,
    pub params: Vec<f64>,
}

/// Intermediate values from [`Mlp::forward`] needed by the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn param_count(n_in: usize, hidden: usize, n_out: usize) -> usize {
        hidden * n_in + hidden + n_out * hidden + n_out
    }

    pub fn zeroed(n_in: usize, hidden: usize, n_out: usize) -> Self {
        Self {
            n_in,
            hidden,
            n_out,
            params: vec![0.0; Self::param_count(n_in, hidden, n_out)],
        }
    }

    /// Hidden weights ~ N(0, 1/n_in), biases zero, output layer per `head`.
    pub fn init<R: Rng + ?Sized>(
        n_in: usize,
        hidden: usize,
        n_out: usize,
        head: HeadInit,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeroed(n_in, hidden, n_out);
        let scale_in = 1.0 / (n_in as f64).sqrt();
        for w in net.w1_mut() {
            *w = rng.sample::<f64, _>(StandardNormal) * scale_in;
        }
        if head == HeadInit::Scaled {
            let scale_h = 1.0 / (hidden as f64).sqrt();
            let (start, end) = net.w2_range();
            for w in &mut net.params[start..end] {
                *w = rng.sample::<f64, _>(StandardNormal) * scale_h;
            }
        }
        net
    }

    /// Rebuilds a network from a flat parameter array, checking its length
    /// and that every entry is finite.
    pub fn from_params(n_in: usize, hidden: usize, n_out: usize, params: Vec<f64>) -> Result<Self> {
        let expected = Self::param_count(n_in, hidden, n_out);
        if params.len() != expected {
            return Err(Error::Arity {
                context: "network parameters",
                expected,
                found: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Data("network parameters contain non-finite values".into()));
        }
        Ok(Self {
            n_in,
            hidden,
            n_out,
            params,
        })
    }

    fn w1_len(&self) -> usize {
        self.hidden * self.n_in
    }

    fn w2_range(&self) -> (usize, usize) {
        let start = self.w1_len() + self.hidden;
        (start, start + self.n_out * self.hidden)
    }

    fn w1_mut(&mut self) -> &mut [f64] {
        let n = self.w1_len();
        &mut self.params[..n]
    }

    /// Hidden pre-activations `W1 x + b1`.
    pub fn pre_activations(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.n_in);
        let w1 = &self.params[..self.w1_len()];
        let b1 = &self.params[self.w1_len()..self.w1_len() + self.hidden];
        w1.chunks_exact(self.n_in)
            .zip(b1)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Activations {
        let hidden: Vec<f64> = self.pre_activations(input).into_iter().map(f64::tanh).collect();
        let (w2_start, w2_end) = self.w2_range();
        let w2 = &self.params[w2_start..w2_end];
        let b2 = &self.params[w2_end..];
        let output = w2
            .chunks_exact(self.hidden)
            .zip(b2)
            .map(|(row, b)| b + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>())
            .collect();
        Activations { hidden, output }
    }

    pub fn output(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).output
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, input: &[f64], act: &Activations, d_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        debug_assert_eq!(d_out.len(), self.n_out);
        let w1_len = self.w1_len();
        let (w2_start, w2_end) = self.w2_range();

        let mut d_hidden = vec![0.0; self.hidden];
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = w2_start + o * self.hidden;
            for h in 0..self.hidden {
                grad[row + h] += g * act.hidden[h];
                d_hidden[h] += g * self.params[row + h];
            }
            grad[w2_end + o] += g;
        }
        for h in 0..self.hidden {
            // tanh' = 1 - tanh^2
            let d_pre = d_hidden[h] * (1.0 - act.hidden[h] * act.hidden[h]);
            if d_pre == 0.0 {
                continue;
            }
            let row = h * self.n_in;
            for (i, x) in input.iter().enumerate() {
                grad[row + i] += d_pre * x;
            }
            grad[w1_len + h] += d_pre;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW) weight decay coefficient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamConfig,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64, config: AdamConfig) -> Self {
        Self {
            config,
            lr,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.t += 1;
        let bias1 = 1.0 - beta1.powi(self.t);
        let bias2 = 1.0 - beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= self.lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * params[i]);
        }
    }
}

/// A fresh random partition of `0..n` into batches of at most `batch_size`.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Trailing moving average of `history` over `window` entries.
pub fn smoothed(history: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    history
        .windows(w.min(history.len()).max(1))
        .map(|win| win.iter().sum::<f64>() / win.len() as f64)
        .collect()
}
