//! Dense feed-forward stacks with hand-written backpropagation.
//!
//! A network is a list of [`Layer`]s. The forward pass returns the output
//! together with an [`MlpCache`] holding whatever each layer needs for its
//! backward pass, so a caller can run several forwards, combine losses, and
//! then push gradients back through each network in turn.
//!
//! Parameters are exposed as a flat list of tensors in layer order
//! (`weight, bias` for affine layers, `gamma, beta` for batch norm). Gradients
//! use the same order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    Affine,
    Relu,
    LeakyRelu(f64),
    BatchNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerSpec {
    pub fn affine(in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind: LayerKind::Affine,
            in_dim,
            out_dim,
        }
    }

    pub fn relu(dim: usize) -> Self {
        Self {
            kind: LayerKind::Relu,
            in_dim: dim,
            out_dim: dim,
        }
    }

    pub fn leaky_relu(dim: usize, slope: f64) -> Self {
        Self {
            kind: LayerKind::LeakyRelu(slope),
            in_dim: dim,
            out_dim: dim,
        }
    }

    pub fn batch_norm(dim: usize) -> Self {
        Self {
            kind: LayerKind::BatchNorm,
            in_dim: dim,
            out_dim: dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Affine {
        /// `in_dim x out_dim`
        weight: Matrix,
        bias: Vec<f64>,
    },
    Relu {
        dim: usize,
    },
    LeakyRelu {
        dim: usize,
        slope: f64,
    },
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Affine { weight, .. } => LayerSpec::affine(weight.rows(), weight.cols()),
            Layer::Relu { dim } => LayerSpec::relu(*dim),
            Layer::LeakyRelu { dim, slope } => LayerSpec::leaky_relu(*dim, *slope),
            Layer::BatchNorm { gamma, .. } => LayerSpec::batch_norm(gamma.len()),
        }
    }

    fn in_dim(&self) -> usize {
        self.spec().in_dim
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Input(Matrix),
    Norm {
        xhat: Matrix,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
}

/// Per-layer intermediates from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    layers: Vec<LayerCache>,
}

/// Gradients, one flat buffer per parameter tensor.
pub type Grads = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::invalid("network needs at least one layer"));
    }
    for (i, s) in specs.iter().enumerate() {
        match s.kind {
            LayerKind::Affine => {}
            LayerKind::LeakyRelu(slope) if !(slope > 0.0 && slope < 1.0) => {
                return Err(Error::invalid(format!(
                    "layer {i}: leaky slope {slope} outside (0, 1)"
                )))
            }
            _ if s.in_dim != s.out_dim => {
                return Err(Error::LayerDim {
                    layer: i,
                    expected: s.in_dim,
                    got: s.out_dim,
                })
            }
            _ => {}
        }
        if i > 0 && specs[i - 1].out_dim != s.in_dim {
            return Err(Error::LayerDim {
                layer: i,
                expected: specs[i - 1].out_dim,
                got: s.in_dim,
            });
        }
    }
    Ok(())
}

impl Mlp {
    /// Randomly initialised network: affine weights and biases uniform in
    /// `±1/sqrt(in_dim)`, batch norm at unit scale and zero shift.
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        validate_specs(specs)?;
        let layers = specs
            .iter()
            .map(|s| match s.kind {
                LayerKind::Affine => {
                    let bound = 1.0 / (s.in_dim.max(1) as f64).sqrt();
                    let w = (0..s.in_dim * s.out_dim)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect();
                    Layer::Affine {
                        weight: Matrix::from_vec(s.in_dim, s.out_dim, w).expect("sized"),
                        bias: (0..s.out_dim).map(|_| rng.gen_range(-bound..bound)).collect(),
                    }
                }
                LayerKind::Relu => Layer::Relu { dim: s.in_dim },
                LayerKind::LeakyRelu(slope) => Layer::LeakyRelu {
                    dim: s.in_dim,
                    slope,
                },
                LayerKind::BatchNorm => Layer::BatchNorm {
                    gamma: vec![1.0; s.in_dim],
                    beta: vec![0.0; s.in_dim],
                    running_mean: vec![0.0; s.in_dim],
                    running_var: vec![1.0; s.in_dim],
                },
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<_> = layers.iter().map(Layer::spec).collect();
        validate_specs(&specs)?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").spec().out_dim
    }

    /// Forward pass. Train mode normalises with batch statistics and updates
    /// the running averages; infer mode uses the running averages.
    pub fn forward(&mut self, input: &Matrix, mode: Mode) -> Result<(Matrix, MlpCache)> {
        if input.cols() != self.in_dim() {
            return Err(Error::LayerDim {
                layer: 0,
                expected: self.in_dim(),
                got: input.cols(),
            });
        }
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (y, c) = layer_forward(layer, x, mode);
            caches.push(c);
            x = y;
        }
        Ok((x, MlpCache { layers: caches }))
    }

    /// Inference without touching running statistics or keeping a cache.
    pub fn infer(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_dim() {
            return Err(Error::LayerDim {
                layer: 0,
                expected: self.in_dim(),
                got: input.cols(),
            });
        }
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer_infer(layer, x);
        }
        Ok(x)
    }

    /// Backward pass: returns `dL/dinput` and parameter gradients.
    pub fn backward(&self, cache: &MlpCache, d_out: &Matrix) -> (Matrix, Grads) {
        let mut grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.layers.len());
        let mut d = d_out.clone();
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            let (dx, g) = layer_backward(layer, c, d);
            grads.push(g);
            d = dx;
        }
        grads.reverse();
        (d, grads.into_iter().flatten().collect())
    }

    pub fn zero_grads(&self) -> Grads {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Affine { weight, bias } => {
                    out.push(weight.data());
                    out.push(bias.as_slice());
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma.as_slice());
                    out.push(beta.as_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Affine { weight, bias } => {
                    out.push(weight.data_mut());
                    out.push(bias.as_mut_slice());
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma.as_mut_slice());
                    out.push(beta.as_mut_slice());
                }
                _ => {}
            }
        }
        out
    }

    /// Names of the trainable tensors, aligned with [`Mlp::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Affine { .. } => {
                    out.push(format!("{i}.weight"));
                    out.push(format!("{i}.bias"));
                }
                Layer::BatchNorm { .. } => {
                    out.push(format!("{i}.gamma"));
                    out.push(format!("{i}.beta"));
                }
                _ => {}
            }
        }
        out
    }
}

fn layer_forward(layer: &mut Layer, x: Matrix, mode: Mode) -> (Matrix, LayerCache) {
    match layer {
        Layer::Affine { .. } | Layer::Relu { .. } | Layer::LeakyRelu { .. } => {
            let y = layer_infer(layer, x.clone());
            (y, LayerCache::Input(x))
        }
        Layer::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
        } => {
            let (n, d) = (x.rows(), x.cols());
            if mode == Mode::Infer || n == 0 {
                let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut xhat = x;
                for i in 0..n {
                    for (j, v) in xhat.row_mut(i).iter_mut().enumerate() {
                        *v = (*v - running_mean[j]) * inv_std[j];
                    }
                }
                let y = scale_shift(&xhat, gamma, beta);
                return (
                    y,
                    LayerCache::Norm {
                        xhat,
                        inv_std,
                        batch_stats: false,
                    },
                );
            }
            let nf = n as f64;
            let mut mean = vec![0.0; d];
            for i in 0..n {
                for (m, v) in mean.iter_mut().zip(x.row(i)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nf);
            let mut var = vec![0.0; d];
            for i in 0..n {
                for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= nf);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mut xhat = x;
            for i in 0..n {
                for (j, v) in xhat.row_mut(i).iter_mut().enumerate() {
                    *v = (*v - mean[j]) * inv_std[j];
                }
            }
            let unbias = if n > 1 { nf / (nf - 1.0) } else { 1.0 };
            for j in 0..d {
                running_mean[j] = (1.0 - BN_MOMENTUM) * running_mean[j] + BN_MOMENTUM * mean[j];
                running_var[j] =
                    (1.0 - BN_MOMENTUM) * running_var[j] + BN_MOMENTUM * var[j] * unbias;
            }
            let y = scale_shift(&xhat, gamma, beta);
            (
                y,
                LayerCache::Norm {
                    xhat,
                    inv_std,
                    batch_stats: true,
                },
            )
        }
    }
}

fn scale_shift(xhat: &Matrix, gamma: &[f64], beta: &[f64]) -> Matrix {
    let mut y = xhat.clone();
    for i in 0..y.rows() {
        for ((v, g), b) in y.row_mut(i).iter_mut().zip(gamma).zip(beta) {
            *v = *v * g + b;
        }
    }
    y
}

fn layer_infer(layer: &Layer, mut x: Matrix) -> Matrix {
    match layer {
        Layer::Affine { weight, bias } => {
            let mut y = x.matmul(weight);
            for i in 0..y.rows() {
                for (v, b) in y.row_mut(i).iter_mut().zip(bias) {
                    *v += b;
                }
            }
            y
        }
        Layer::Relu { .. } => {
            x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            x
        }
        Layer::LeakyRelu { slope, .. } => {
            x.data_mut()
                .iter_mut()
                .for_each(|v| *v = if *v > 0.0 { *v } else { *v * slope });
            x
        }
        Layer::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
        } => {
            for i in 0..x.rows() {
                for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                    let xhat = (*v - running_mean[j]) / (running_var[j] + BN_EPS).sqrt();
                    *v = xhat * gamma[j] + beta[j];
                }
            }
            x
        }
    }
}

fn layer_backward(layer: &Layer, cache: &LayerCache, mut d: Matrix) -> (Matrix, Vec<Vec<f64>>) {
    match (layer, cache) {
        (Layer::Affine { weight, .. }, LayerCache::Input(x)) => {
            let mut dw = Matrix::zeros(weight.rows(), weight.cols());
            dw.add_t_matmul(x, &d);
            let mut db = vec![0.0; weight.cols()];
            for i in 0..d.rows() {
                for (b, v) in db.iter_mut().zip(d.row(i)) {
                    *b += v;
                }
            }
            let dx = d.matmul_t(weight);
            (dx, vec![dw.into_vec(), db])
        }
        (Layer::Relu { .. }, LayerCache::Input(x)) => {
            for (g, v) in d.data_mut().iter_mut().zip(x.data()) {
                if *v <= 0.0 {
                    *g = 0.0;
                }
            }
            (d, vec![])
        }
        (Layer::LeakyRelu { slope, .. }, LayerCache::Input(x)) => {
            for (g, v) in d.data_mut().iter_mut().zip(x.data()) {
                if *v <= 0.0 {
                    *g *= slope;
                }
            }
            (d, vec![])
        }
        (
            Layer::BatchNorm { gamma, .. },
            LayerCache::Norm {
                xhat,
                inv_std,
                batch_stats,
            },
        ) => {
            let (n, dim) = (d.rows(), d.cols());
            let mut dgamma = vec![0.0; dim];
            let mut dbeta = vec![0.0; dim];
            for i in 0..n {
                for j in 0..dim {
                    let g = d.get(i, j);
                    dgamma[j] += g * xhat.get(i, j);
                    dbeta[j] += g;
                }
            }
            // Batch statistics couple every row; running statistics do not.
            let mut dx = Matrix::zeros(n, dim);
            if *batch_stats {
                let nf = n as f64;
                for i in 0..n {
                    for j in 0..dim {
                        let v = gamma[j] * inv_std[j] / nf
                            * (nf * d.get(i, j) - dbeta[j] - xhat.get(i, j) * dgamma[j]);
                        dx.set(i, j, v);
                    }
                }
            } else {
                for i in 0..n {
                    for j in 0..dim {
                        dx.set(i, j, d.get(i, j) * gamma[j] * inv_std[j]);
                    }
                }
            }
            d = dx;
            (d, vec![dgamma, dbeta])
        }
        _ => unreachable!("cache does not match layer"),
    }
}
