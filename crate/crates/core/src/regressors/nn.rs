//! Fully connected tanh network trained on a pressure-difference loss.
//!
//! The network emits standardized coefficients `o`; physical coefficients are
//! `c = mean + std * o`. For one training row with samples
//! `(phi_i, t_i)`, where `phi_i` is the RRI basis (`Q`, `Q^2`, `Qdot`, as
//! relevant) and `t_i` the observed pressure difference, the row loss is the
//! sample mean of `(phi_i . c - t_i)^2`. That mean is an exact quadratic in
//! `c`, so each row is reduced once to `(c - c*)' A (c - c*) + r0` and epochs
//! cost nothing per sample.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnSettings {
    pub hidden_size: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Activations kept for backpropagation: input plus every layer output.
struct Cache {
    activations: Vec<Vec<f64>>,
}

impl Network {
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                Layer {
                    n_in,
                    n_out,
                    weights: (0..n_in * n_out)
                        .map(|_| rng.random_range(-limit..limit))
                        .collect(),
                    bias: vec![0.0; n_out],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn forward_cached(&self, x: &[f64]) -> Cache {
        let mut activations = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let input = activations.last().unwrap();
            let out: Vec<f64> = (0..layer.n_out)
                .map(|o| {
                    let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    let z = layer.bias[o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                    if li == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            activations.push(out);
        }
        Cache { activations }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).activations.pop().unwrap()
    }

    /// Accumulate parameter gradients for output sensitivity `d_out`.
    fn backward(&self, cache: &Cache, d_out: &[f64], grad: &mut [Vec<f64>]) {
        let mut delta = d_out.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &cache.activations[li];
            let g = &mut grad[li];
            for o in 0..layer.n_out {
                for i in 0..layer.n_in {
                    g[o * layer.n_in + i] += delta[o] * input[i];
                }
                g[layer.weights.len() + o] += delta[o];
            }
            if li == 0 {
                break;
            }
            // input of this layer is tanh output of the previous one
            delta = (0..layer.n_in)
                .map(|i| {
                    let s: f64 = (0..layer.n_out)
                        .map(|o| layer.weights[o * layer.n_in + i] * delta[o])
                        .sum();
                    s * (1.0 - input[i] * input[i])
                })
                .collect();
        }
    }

    fn zero_grad(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .map(|l| vec![0.0; l.weights.len() + l.bias.len()])
            .collect()
    }

    fn apply(&mut self, grad: &[Vec<f64>], step: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grad) {
            let nw = layer.weights.len();
            for (w, d) in layer.weights.iter_mut().zip(&g[..nw]) {
                *w -= step * d;
            }
            for (b, d) in layer.bias.iter_mut().zip(&g[nw..]) {
                *b -= step * d;
            }
        }
    }

    /// Flat parameter view, weights then bias per layer.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = p[at];
                at += 1;
            }
        }
    }
}

/// One row's sample-mean squared pressure error as a quadratic in the
/// physical coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureLoss {
    dim: usize,
    /// Row-major `dim x dim`, mean of `phi phi'`.
    gram: Vec<f64>,
    center: Vec<f64>,
    floor: f64,
}

impl PressureLoss {
    /// `basis[i]` is `phi_i`, `target[i]` the observed pressure difference
    /// minus any part not produced by the model.
    pub fn new(basis: &[Vec<f64>], target: &[f64]) -> Result<Self> {
        let n = basis.len();
        if n == 0 || target.len() != n {
            return Err(Error::Training(
                "pressure loss needs matching, non-empty samples".into(),
            ));
        }
        let dim = basis[0].len();
        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        let mut tt = 0.0;
        for (phi, t) in basis.iter().zip(target) {
            for a in 0..dim {
                rhs[a] += phi[a] * t;
                for b in 0..dim {
                    gram[(a, b)] += phi[a] * phi[b];
                }
            }
            tt += t * t;
        }
        gram /= n as f64;
        rhs /= n as f64;
        tt /= n as f64;
        let center = gram
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-14 * gram.amax().max(1e-300))
            .map_err(|e| Error::Training(format!("pressure loss: {e}")))?;
        let floor = (tt - rhs.dot(&center)).max(0.0);
        Ok(Self {
            dim,
            gram: gram.transpose().as_slice().to_vec(),
            center: center.iter().copied().collect(),
            floor,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn offset(&self, c: &[f64]) -> Vec<f64> {
        c.iter().zip(&self.center).map(|(a, b)| a - b).collect()
    }

    pub fn value(&self, c: &[f64]) -> f64 {
        let d = self.offset(c);
        let mut q = 0.0;
        for a in 0..self.dim {
            for b in 0..self.dim {
                q += d[a] * self.gram[a * self.dim + b] * d[b];
            }
        }
        q + self.floor
    }

    /// Gradient with respect to the physical coefficients.
    pub fn gradient(&self, c: &[f64]) -> Vec<f64> {
        let d = self.offset(c);
        (0..self.dim)
            .map(|a| {
                2.0 * (0..self.dim)
                    .map(|b| self.gram[a * self.dim + b] * d[b])
                    .sum::<f64>()
            })
            .collect()
    }
}

/// A network together with the affine map from its outputs to coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnModel {
    pub network: Network,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
    /// Squared pressure scale that normalizes the loss.
    pub loss_scale: f64,
    /// Training-set loss after every epoch.
    pub loss_history: Vec<f64>,
    pub best_epoch: usize,
}

/// Objective over a set of rows: mean row loss divided by `scale`.
pub struct Objective<'a> {
    pub x: &'a [Vec<f64>],
    pub losses: &'a [PressureLoss],
    pub target_mean: &'a [f64],
    pub target_std: &'a [f64],
    pub scale: f64,
}

impl Objective<'_> {
    fn coeffs(&self, out: &[f64]) -> Vec<f64> {
        out.iter()
            .zip(self.target_mean.iter().zip(self.target_std))
            .map(|(o, (m, s))| m + s * o)
            .collect()
    }

    pub fn value(&self, net: &Network, rows: &[usize]) -> f64 {
        let total: f64 = rows
            .iter()
            .map(|&r| self.losses[r].value(&self.coeffs(&net.forward(&self.x[r]))))
            .sum();
        total / (rows.len() as f64 * self.scale)
    }

    /// Value and per-layer gradients on `rows`.
    pub fn value_and_gradient(&self, net: &Network, rows: &[usize]) -> (f64, Vec<Vec<f64>>) {
        let mut grad = net.zero_grad();
        let norm = 1.0 / (rows.len() as f64 * self.scale);
        let mut total = 0.0;
        for &r in rows {
            let cache = net.forward_cached(&self.x[r]);
            let c = self.coeffs(cache.activations.last().unwrap());
            total += self.losses[r].value(&c);
            let d_out: Vec<f64> = self.losses[r]
                .gradient(&c)
                .iter()
                .zip(self.target_std)
                .map(|(g, s)| g * s * norm)
                .collect();
            net.backward(&cache, &d_out, &mut grad);
        }
        (total * norm, grad)
    }
}

pub fn train(
    x: &[Vec<f64>],
    losses: &[PressureLoss],
    target_mean: &[f64],
    target_std: &[f64],
    settings: &NnSettings,
    seed: u64,
) -> Result<NnModel> {
    let n = x.len();
    if n == 0 || losses.len() != n {
        return Err(Error::Training("nn: need one pressure loss per row".into()));
    }
    let n_out = target_mean.len();
    if losses.iter().any(|l| l.dim() != n_out) {
        return Err(Error::Training(
            "nn: loss dimension differs from output dimension".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![x[0].len()];
    sizes.extend(std::iter::repeat_n(
        settings.hidden_size,
        settings.hidden_layers,
    ));
    sizes.push(n_out);
    let mut net = Network::new(&sizes, &mut rng);

    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    let n_val = if n >= 10 { (n / 10).max(1) } else { 0 };
    let (val, fit_rows) = rows.split_at(n_val);
    let mut fit_rows = fit_rows.to_vec();
    let val: Vec<usize> = if val.is_empty() {
        fit_rows.clone()
    } else {
        val.to_vec()
    };

    let mean_loss = losses.iter().map(|l| l.value(target_mean)).sum::<f64>() / n as f64;
    let scale = if mean_loss > 0.0 && mean_loss.is_finite() {
        mean_loss
    } else {
        1.0
    };
    let objective = Objective {
        x,
        losses,
        target_mean,
        target_std,
        scale,
    };

    let mut best = (objective.value(&net, &val), net.clone(), 0);
    let mut history = Vec::with_capacity(settings.epochs);
    let batch = settings.batch_size.max(1);
    for epoch in 0..settings.epochs {
        let lr = settings.learning_rate / (1.0 + settings.lr_decay * epoch as f64);
        fit_rows.shuffle(&mut rng);
        for chunk in fit_rows.chunks(batch) {
            let (_, grad) = objective.value_and_gradient(&net, chunk);
            net.apply(&grad, lr);
        }
        let train_loss = objective.value(&net, &fit_rows);
        if !train_loss.is_finite() {
            return Err(Error::Training(format!(
                "nn: loss diverged at epoch {epoch}"
            )));
        }
        history.push(train_loss);
        let val_loss = objective.value(&net, &val);
        if val_loss < best.0 {
            best = (val_loss, net.clone(), epoch + 1);
        } else if epoch + 1 - best.2 >= settings.patience {
            break;
        }
    }

    Ok(NnModel {
        network: best.1,
        target_mean: target_mean.to_vec(),
        target_std: target_std.to_vec(),
        loss_scale: scale,
        loss_history: history,
        best_epoch: best.2,
    })
}

impl NnModel {
    /// Physical coefficients.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.network
            .forward(x)
            .iter()
            .zip(self.target_mean.iter().zip(&self.target_std))
            .map(|(o, (m, s))| m + s * o)
            .collect()
    }
}
