//! Fully connected network with a softmax output, trained with Adam.
//!
//! Each epoch shuffles the training rows and takes one Adam step per
//! mini-batch on the mean cross-entropy. Training stops after `max_epochs`, or
//! once the epoch loss has failed to improve on the best loss so far by at
//! least `tol` for `n_iter_no_change` consecutive epochs. Output units of
//! classes absent from the training labels are masked to probability zero.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{present_classes, Classifier};
use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::preprocess::DesignMatrix;
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

pub const MAX_LAYERS: usize = 5;
pub const MAX_WIDTH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// Hidden layer widths, non-increasing.
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_no_change")]
    pub n_iter_no_change: usize,
}

fn default_max_epochs() -> usize {
    200
}

fn default_tol() -> f64 {
    1e-4
}

fn default_no_change() -> usize {
    10
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            layers: vec![128, 64, 32, 16, 8],
            activation: Activation::Relu,
            batch_size: 100,
            learning_rate: 1e-4,
            max_epochs: default_max_epochs(),
            tol: default_tol(),
            n_iter_no_change: default_no_change(),
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers.len() > MAX_LAYERS {
            return Err(Error::invalid(format!(
                "MLP needs 1 to {MAX_LAYERS} hidden layers, got {}",
                self.layers.len()
            )));
        }
        if self.layers.iter().any(|&w| w == 0 || w > MAX_WIDTH) {
            return Err(Error::invalid(format!(
                "MLP layer widths must be in 1..={MAX_WIDTH}, got {:?}",
                self.layers
            )));
        }
        if self.layers.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid(format!(
                "MLP layers must be pyramid shaped (non-increasing), got {:?}",
                self.layers
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("MLP batch_size and max_epochs must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "MLP learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("MLP tol must be >= 0"));
        }
        Ok(())
    }
}

/// Weights of layer `l` are stored input-major: `weights[l][i * out + o]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Network<T> {
    /// Layer widths including input and the 3-way output.
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
    /// Output units that take part in the softmax.
    pub mask: [bool; 3],
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Network<T> {
    /// He-normal init for relu, Glorot-uniform for tanh; zero biases.
    pub fn init(sizes: Vec<usize>, activation: Activation, mask: [bool; 3], seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let layer: Vec<T> = match activation {
                Activation::Relu => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    (0..fan_in * fan_out).map(|_| T::of(normal.sample(&mut rng))).collect()
                }
                Activation::Tanh => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..fan_in * fan_out)
                        .map(|_| T::of(rng.random_range(-bound..bound)))
                        .collect()
                }
            };
            weights.push(layer);
            biases.push(vec![T::zero(); fan_out]);
        }
        Network {
            sizes,
            activation,
            weights,
            biases,
            mask,
        }
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Activations of every layer for a row-major batch; the last entry holds
    /// softmax probabilities.
    fn forward(&self, x: &[T], n: usize) -> Vec<Vec<T>> {
        let n_layers = self.weights.len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for l in 0..n_layers {
            let (d_in, d_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.weights[l];
            let input = &acts[l];
            let mut out = vec![T::zero(); n * d_out];
            for b in 0..n {
                let o = &mut out[b * d_out..(b + 1) * d_out];
                o.copy_from_slice(&self.biases[l]);
                for (i, &a) in input[b * d_in..(b + 1) * d_in].iter().enumerate() {
                    if a == T::zero() {
                        continue;
                    }
                    for (ov, &wv) in o.iter_mut().zip(&w[i * d_out..(i + 1) * d_out]) {
                        *ov += a * wv;
                    }
                }
            }
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            } else {
                for row in out.chunks_exact_mut(d_out) {
                    self.masked_softmax(row);
                }
            }
            acts.push(out);
        }
        acts
    }

    fn masked_softmax(&self, row: &mut [T]) {
        let mut m = T::neg_infinity();
        for (k, &v) in row.iter().enumerate() {
            if self.mask[k] {
                m = m.max(v);
            }
        }
        let mut total = T::zero();
        for (k, v) in row.iter_mut().enumerate() {
            *v = if self.mask[k] { (*v - m).exp() } else { T::zero() };
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }

    pub fn proba_batch(&self, x: &[T], n: usize) -> Vec<[T; 3]> {
        let acts = self.forward(x, n);
        acts.last()
            .expect("output layer")
            .chunks_exact(3)
            .map(|r| [r[0], r[1], r[2]])
            .collect()
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_gradients(&self, x: &[T], y: &[ClassLabel]) -> (T, Gradients<T>) {
        let n = y.len();
        let acts = self.forward(x, n);
        let n_layers = self.weights.len();
        let inv_n = T::one() / T::of_usize(n);
        let tiny = T::min_positive_value();
        let out = &acts[n_layers];
        let mut loss = T::zero();
        // dL/dz at the output: (p - onehot) / n.
        let mut delta = out.clone();
        for (b, label) in y.iter().enumerate() {
            let k = label.index();
            loss -= out[b * 3 + k].max(tiny).ln();
            delta[b * 3 + k] -= T::one();
        }
        delta.iter_mut().for_each(|v| *v *= inv_n);
        let mut gw: Vec<Vec<T>> = self.weights.iter().map(|w| vec![T::zero(); w.len()]).collect();
        let mut gb: Vec<Vec<T>> = self.biases.iter().map(|b| vec![T::zero(); b.len()]).collect();
        for l in (0..n_layers).rev() {
            let (d_in, d_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &acts[l];
            let w = &self.weights[l];
            for b in 0..n {
                let dl = &delta[b * d_out..(b + 1) * d_out];
                for (g, &d) in gb[l].iter_mut().zip(dl) {
                    *g += d;
                }
                for (i, &a) in input[b * d_in..(b + 1) * d_in].iter().enumerate() {
                    if a == T::zero() {
                        continue;
                    }
                    for (g, &d) in gw[l][i * d_out..(i + 1) * d_out].iter_mut().zip(dl) {
                        *g += a * d;
                    }
                }
            }
            if l > 0 {
                let mut prev = vec![T::zero(); n * d_in];
                for b in 0..n {
                    let dl = &delta[b * d_out..(b + 1) * d_out];
                    for i in 0..d_in {
                        let a = input[b * d_in + i];
                        let deriv = self.activation.derivative_from_output(a);
                        if deriv == T::zero() {
                            continue;
                        }
                        let s = w[i * d_out..(i + 1) * d_out]
                            .iter()
                            .zip(dl)
                            .fold(T::zero(), |s, (&wv, &d)| s + wv * d);
                        prev[b * d_in + i] = s * deriv;
                    }
                }
                delta = prev;
            }
        }
        (loss * inv_n, Gradients { weights: gw, biases: gb })
    }
}

struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    t: i32,
    m: Gradients<T>,
    v: Gradients<T>,
}

impl<T: Scalar> Adam<T> {
    fn new(net: &Network<T>, lr: f64) -> Self {
        let zeros = Gradients {
            weights: net.weights.iter().map(|w| vec![T::zero(); w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        };
        Adam {
            lr: T::of(lr),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, net: &mut Network<T>, g: &Gradients<T>) {
        self.t += 1;
        let one = T::one();
        let step = self.lr * (one - self.beta2.powi(self.t)).sqrt() / (one - self.beta1.powi(self.t));
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                p[k] -= step * m[k] / (v[k].sqrt() + eps);
            }
        };
        for l in 0..net.weights.len() {
            update(&mut net.weights[l], &g.weights[l], &mut self.m.weights[l], &mut self.v.weights[l]);
            update(&mut net.biases[l], &g.biases[l], &mut self.m.biases[l], &mut self.v.biases[l]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MlpModel<T> {
    pub network: Network<T>,
    pub epochs: usize,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// True when early stopping fired before the epoch budget ran out.
    pub stopped_early: bool,
}

pub fn fit<T: Scalar>(params: &MlpParams, x: &DesignMatrix<T>, y: &[ClassLabel], seed: u64) -> Result<MlpModel<T>> {
    let n = x.n_rows();
    let d = x.n_cols();
    let mut sizes = vec![d];
    sizes.extend_from_slice(&params.layers);
    sizes.push(3);
    let mut net = Network::init(sizes, params.activation, present_classes(y), seed);
    let mut adam = Adam::new(&net, params.learning_rate);
    let mut rng = rng_from_seed(crate::rng::splitmix64(seed ^ 0x5348_5546_464c_4521));
    let mut order: Vec<usize> = (0..n).collect();
    let batch = params.batch_size.min(n);
    let mut best = f64::INFINITY;
    let mut no_improve = 0usize;
    let mut loss_curve = Vec::new();
    let mut stopped_early = false;
    let mut xb: Vec<T> = Vec::with_capacity(batch * d);
    let mut yb: Vec<ClassLabel> = Vec::with_capacity(batch);
    for _ in 0..params.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(x.row(i));
                yb.push(y[i]);
            }
            let (loss, grads) = net.loss_and_gradients(&xb, &yb);
            epoch_loss += loss.as_f64() * chunk.len() as f64;
            adam.step(&mut net, &grads);
        }
        let epoch_loss = epoch_loss / n as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Fit(format!("MLP training diverged (loss {epoch_loss})")));
        }
        loss_curve.push(epoch_loss);
        if epoch_loss > best - params.tol {
            no_improve += 1;
        } else {
            no_improve = 0;
        }
        best = best.min(epoch_loss);
        if no_improve >= params.n_iter_no_change {
            stopped_early = true;
            break;
        }
    }
    Ok(MlpModel {
        network: net,
        epochs: loss_curve.len(),
        loss_curve,
        stopped_early,
    })
}

impl<T: Scalar> MlpModel<T> {
    pub fn proba_batch(&self, values: &[T], n_cols: usize) -> Vec<[T; 3]> {
        if n_cols == 0 {
            return Vec::new();
        }
        self.network.proba_batch(values, values.len() / n_cols)
    }
}

impl<T: Scalar> Classifier<T> for MlpModel<T> {
    fn proba_row(&self, x: &[T]) -> [T; 3] {
        self.network.proba_batch(x, 1)[0]
    }
}
