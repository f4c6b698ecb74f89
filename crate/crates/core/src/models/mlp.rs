//! Fully connected regression network trained on mean-squared error.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step used by the finite-difference gradient check.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpParams {
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> Vec<usize> {
    vec![16]
}
fn default_activation() -> Activation {
    Activation::Relu
}
fn default_epochs() -> usize {
    500
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    0.01
}
fn default_optimizer() -> Optimizer {
    Optimizer::Sgd
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden_dims: default_hidden(),
            activation: default_activation(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            optimizer: default_optimizer(),
            seed: 0,
        }
    }
}

impl MlpParams {
    pub fn check(&self) -> Result<()> {
        if self.hidden_dims.contains(&0) {
            return Err(Error::Model("hidden layer widths must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Model("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Model("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

struct Tape {
    /// Pre-activations per layer, `n x out`.
    z: Vec<DMatrix<f64>>,
    /// Inputs to each layer followed by the network output.
    a: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// He-uniform weights, zero biases.
    pub fn init(n_inputs: usize, params: &MlpParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![n_inputs];
        dims.extend(&params.hidden_dims);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0].max(1) as f64).sqrt();
                Layer {
                    weight: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..=bound)),
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect();
        Self { layers, activation: params.activation }
    }

    fn forward_tape(&self, x: &DMatrix<f64>) -> Tape {
        let mut a = vec![x.clone()];
        let mut z = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut zk = &a[k] * layer.weight.transpose();
            for mut row in zk.row_iter_mut() {
                row += layer.bias.transpose();
            }
            let ak = if k == last { zk.clone() } else { zk.map(|v| self.activation.apply(v)) };
            z.push(zk);
            a.push(ak);
        }
        Tape { z, a }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.forward_tape(x).a.last().expect("output").column(0).iter().copied().collect()
    }

    pub fn loss(&self, x: &DMatrix<f64>, y: &[f64]) -> f64 {
        let pred = self.predict(x);
        pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
    }

    /// Gradient of the mean-squared error, one `Layer` per layer.
    pub fn gradients(&self, x: &DMatrix<f64>, y: &[f64]) -> Vec<Layer> {
        let tape = self.forward_tape(x);
        let n = y.len() as f64;
        let out = tape.a.last().expect("output");
        let mut delta = DMatrix::from_fn(out.nrows(), 1, |i, _| 2.0 * (out[(i, 0)] - y[i]) / n);
        let mut grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let gw = delta.transpose() * &tape.a[k];
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push(Layer { weight: gw, bias: gb });
            if k > 0 {
                let back = &delta * &self.layers[k].weight;
                let (zp, ap) = (&tape.z[k - 1], &tape.a[k]);
                delta = DMatrix::from_fn(back.nrows(), back.ncols(), |i, j| {
                    back[(i, j)] * self.activation.derivative(zp[(i, j)], ap[(i, j)])
                });
            }
        }
        grads.reverse();
        grads
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut k = 0;
        for l in self.layers.iter_mut() {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = flat[k];
                k += 1;
            }
        }
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied()).collect()
}

pub fn fit_mlp(x: &DMatrix<f64>, y: &[f64], params: &MlpParams, seed: u64) -> Result<Mlp> {
    params.check()?;
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("X has {} rows but y has {} values", x.nrows(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::Model("cannot fit on zero samples".into()));
    }
    let mut net = Mlp::init(x.ncols(), params, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let n_params = net.n_params();
    let (mut m, mut v) = (vec![0.0; n_params], vec![0.0; n_params]);
    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut step = 0i32;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            let xb = DMatrix::from_fn(batch.len(), x.ncols(), |i, j| x[(batch[i], j)]);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let grad = flatten(&net.gradients(&xb, &yb));
            let mut theta = net.flat_params();
            step += 1;
            match params.optimizer {
                Optimizer::Sgd => {
                    for (t, g) in theta.iter_mut().zip(&grad) {
                        *t -= params.learning_rate * g;
                    }
                }
                Optimizer::Adam => {
                    let c1 = 1.0 - beta1.powi(step);
                    let c2 = 1.0 - beta2.powi(step);
                    for i in 0..n_params {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                        theta[i] -= params.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
            net.set_flat_params(&theta);
        }
    }
    if net.flat_params().iter().any(|v| !v.is_finite()) {
        return Err(Error::Model("MLP training diverged; lower the learning rate".into()));
    }
    Ok(net)
}

/// Largest relative difference between back-propagated gradients and
/// central finite differences over every parameter of a freshly
/// initialized network.
pub fn gradient_check(params: &MlpParams, x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let net = Mlp::init(x.ncols(), params, params.seed);
    gradient_check_at(&net, x, y)
}

pub fn gradient_check_at(net: &Mlp, x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let analytic = flatten(&net.gradients(x, y));
    let theta = net.flat_params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + FD_STEP;
        probe.set_flat_params(&t);
        let up = probe.loss(x, y);
        t[i] = theta[i] - FD_STEP;
        probe.set_flat_params(&t);
        let down = probe.loss(x, y);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(12, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = (0..12).map(|i| x[(i, 0)] - 2.0 * x[(i, 3)] + 0.3).collect();
        (x, y)
    }

    #[test]
    fn finite_difference_agrees() {
        let (x, y) = tiny();
        for activation in [Activation::Tanh, Activation::Relu, Activation::Identity] {
            let p = MlpParams { hidden_dims: vec![5, 3], activation, seed: 4, ..Default::default() };
            let err = gradient_check(&p, &x, &y);
            assert!(err < 1e-4, "{activation:?}: {err}");
        }
    }

    #[test]
    fn linear_single_layer_gradient_closed_form() {
        let (x, y) = tiny();
        let p = MlpParams { hidden_dims: vec![], activation: Activation::Identity, ..Default::default() };
        let net = Mlp::init(4, &p, 9);
        let g = net.gradients(&x, &y);
        let w = net.layers[0].weight.transpose();
        let resid = &x * &w - DMatrix::from_column_slice(12, 1, &y);
        let expected = x.transpose() * resid * (2.0 / 12.0);
        for j in 0..4 {
            assert!((g[0].weight[(0, j)] - expected[(j, 0)]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_input_gradients() {
        let x = DMatrix::zeros(5, 3);
        let y = vec![1.0; 5];
        let net = Mlp::init(3, &MlpParams::default(), 2);
        let g = net.gradients(&x, &y);
        assert!(g.iter().all(|l| l.weight.iter().all(|&v| v == 0.0)));
        assert!(g.last().unwrap().bias[0] != 0.0);
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = Mlp::init(3, &MlpParams::default(), 2);
        for l in net.layers.iter_mut() {
            l.weight.fill(0.0);
            l.bias.fill(0.25);
        }
        let out = net.predict(&DMatrix::from_element(4, 3, 7.0));
        assert!(out.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (x, y) = tiny();
        let p = MlpParams { epochs: 300, batch_size: 4, learning_rate: 0.01, optimizer: Optimizer::Adam, ..Default::default() };
        let a = fit_mlp(&x, &y, &p, 5).unwrap();
        let b = fit_mlp(&x, &y, &p, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.loss(&x, &y) < Mlp::init(4, &p, 5).loss(&x, &y) * 0.1);
    }
}
