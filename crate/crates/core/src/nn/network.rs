use rand::Rng;
use rayon::prelude::*;

use super::config::{Activation, LayerSpec, NetworkConfig, Shape3};
use super::tensor::{frames_to_tensor, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::seed;
use crate::signal::IqFrame;

const PREDICT_CHUNK: usize = 64;

/// Weights and biases of one layer; empty for parameter-free layers.
///
/// Convolution weights are `filters x channels x kh x kw`, dense weights
/// `units x inputs`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams<S> {
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> LayerParams<S> {
    fn zeros(weights: usize, biases: usize) -> Self {
        LayerParams {
            weight: vec![S::zero(); weights],
            bias: vec![S::zero(); biases],
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros_like(&self) -> Self {
        LayerParams::zeros(self.weight.len(), self.bias.len())
    }
}

/// Per-layer parameter gradients, laid out like [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub layers: Vec<LayerParams<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn iter(&self) -> impl Iterator<Item = &S> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().map(|g| g.as_f64().abs()).fold(0.0, f64::max)
    }
}

/// Activations retained by a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<S> {
    /// `activations[0]` is the input, `activations[i + 1]` the output of
    /// layer `i` after its activation function.
    pub activations: Vec<Tensor<S>>,
    argmax: Vec<Option<Vec<u32>>>,
}

impl<S: Scalar> ForwardPass<S> {
    pub fn output(&self) -> &Tensor<S> {
        self.activations.last().expect("pass always holds the input")
    }

    /// Piecewise-linear region of the pass: every ReLU on/off state and every
    /// pooling argmax. Two passes with equal patterns lie on the same linear
    /// piece of the network.
    pub fn pattern(&self, config: &NetworkConfig) -> Vec<u64> {
        let mut out = Vec::new();
        for (i, layer) in config.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv2d {
                    activation: Activation::Relu,
                    ..
                }
                | LayerSpec::Dense {
                    activation: Activation::Relu,
                    ..
                } => out.extend(
                    self.activations[i + 1]
                        .data()
                        .iter()
                        .map(|v| (*v > S::zero()) as u64),
                ),
                LayerSpec::MaxPool { .. } => {
                    out.extend(self.argmax[i].iter().flatten().map(|&a| a as u64))
                }
                _ => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    config: NetworkConfig,
    shapes: Vec<Shape3>,
    params: Vec<LayerParams<S>>,
}

fn param_sizes(layer: &LayerSpec, input: Shape3) -> (usize, usize) {
    match *layer {
        LayerSpec::Conv2d {
            filters, kernel, ..
        } => (filters * input.channels * kernel[0] * kernel[1], filters),
        LayerSpec::Dense { units, .. } => (units * input.len(), units),
        LayerSpec::MaxPool { .. } | LayerSpec::Flatten => (0, 0),
    }
}

/// (fan_in, fan_out) used by the initializers.
fn fans(layer: &LayerSpec, input: Shape3) -> (usize, usize) {
    match *layer {
        LayerSpec::Conv2d {
            filters, kernel, ..
        } => {
            let area = kernel[0] * kernel[1];
            (input.channels * area, filters * area)
        }
        LayerSpec::Dense { units, .. } => (input.len(), units),
        _ => (0, 0),
    }
}

fn activation_of(layer: &LayerSpec) -> Option<Activation> {
    match *layer {
        LayerSpec::Conv2d { activation, .. } | LayerSpec::Dense { activation, .. } => {
            Some(activation)
        }
        _ => None,
    }
}

impl<S: Scalar> Network<S> {
    /// All weights and biases zero.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes()?;
        let params = config
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let input = if i == 0 { config.input } else { shapes[i - 1] };
                let (w, b) = param_sizes(layer, input);
                LayerParams::zeros(w, b)
            })
            .collect();
        Ok(Network {
            config,
            shapes,
            params,
        })
    }

    /// He-uniform weights for ReLU layers, Glorot-uniform for linear ones,
    /// zero biases.
    pub fn new(config: NetworkConfig, init_seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = seed::rng(init_seed);
        for i in 0..net.config.layers.len() {
            let layer = net.config.layers[i];
            let input = net.input_shape(i);
            let (fan_in, fan_out) = fans(&layer, input);
            let limit = match activation_of(&layer) {
                Some(Activation::Relu) => (6.0 / fan_in as f64).sqrt(),
                Some(Activation::Linear) => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                None => continue,
            };
            for w in net.params[i].weight.iter_mut() {
                *w = S::from_f64(rng.random_range(-limit..limit));
            }
        }
        Ok(net)
    }

    pub fn from_params(config: NetworkConfig, params: Vec<LayerParams<S>>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape {
                expected: vec![net.params.len()],
                actual: vec![params.len()],
            });
        }
        for (have, want) in params.iter().zip(&net.params) {
            if have.weight.len() != want.weight.len() || have.bias.len() != want.bias.len() {
                return Err(Error::Shape {
                    expected: vec![want.weight.len(), want.bias.len()],
                    actual: vec![have.weight.len(), have.bias.len()],
                });
            }
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[LayerParams<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<S>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    fn input_shape(&self, layer: usize) -> Shape3 {
        if layer == 0 {
            self.config.input
        } else {
            self.shapes[layer - 1]
        }
    }

    pub fn cast<T: Scalar>(&self) -> Network<T> {
        let conv = |v: &[S]| v.iter().map(|x| T::from_f64(x.as_f64())).collect();
        Network {
            config: self.config.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| LayerParams {
                    weight: conv(&p.weight),
                    bias: conv(&p.bias),
                })
                .collect(),
        }
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        let inp = self.config.input;
        let expected = vec![x.batch(), inp.channels, inp.height, inp.width];
        if x.shape() != expected.as_slice() {
            return Err(Error::Shape {
                expected,
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// One prediction per batch item, as a `B x 1` tensor.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for i in 0..self.config.layers.len() {
            cur = self.layer_forward(i, &cur).0;
        }
        let b = cur.batch();
        Ok(cur.reshaped(vec![b, 1]))
    }

    /// Forward pass that keeps every intermediate activation for backprop.
    pub fn forward_pass(&self, x: Tensor<S>) -> Result<ForwardPass<S>> {
        self.check_input(&x)?;
        let mut activations = vec![x];
        let mut argmax = Vec::with_capacity(self.config.layers.len());
        for i in 0..self.config.layers.len() {
            let (out, am) = self.layer_forward(i, activations.last().unwrap());
            activations.push(out);
            argmax.push(am);
        }
        Ok(ForwardPass {
            activations,
            argmax,
        })
    }

    fn layer_forward(&self, i: usize, x: &Tensor<S>) -> (Tensor<S>, Option<Vec<u32>>) {
        let input = self.input_shape(i);
        let output = self.shapes[i];
        let batch = x.batch();
        let out_shape = vec![batch, output.channels, output.height, output.width];
        let layer = self.config.layers[i];
        let p = &self.params[i];
        let mut out = Tensor::zeros(out_shape);
        let mut argmax = None;
        match layer {
            LayerSpec::Conv2d { kernel, .. } => {
                let ckk = input.channels * kernel[0] * kernel[1];
                let hw = output.height * output.width;
                let mut cols = vec![S::zero(); ckk * hw];
                let item_out = output.len();
                for (b, dst) in out.data_mut().chunks_mut(item_out).enumerate() {
                    im2col(x.item(b), input, kernel, output, &mut cols);
                    S::gemm(false, false, output.channels, hw, ckk, &p.weight, &cols, S::zero(), dst);
                    for (f, row) in dst.chunks_mut(hw).enumerate() {
                        row.iter_mut().for_each(|v| *v = *v + p.bias[f]);
                    }
                }
            }
            LayerSpec::MaxPool { size } => {
                let mut idx = vec![0u32; batch * output.len()];
                let item_in = input.len();
                for b in 0..batch {
                    let src = x.item(b);
                    let base = b * output.len();
                    let dst = &mut out.data_mut()[base..base + output.len()];
                    max_pool(src, input, size, output, dst, &mut idx[base..base + output.len()]);
                }
                debug_assert!(item_in > 0);
                argmax = Some(idx);
            }
            LayerSpec::Flatten => {
                out.data_mut().copy_from_slice(x.data());
            }
            LayerSpec::Dense { units, .. } => {
                let inputs = input.len();
                S::gemm(false, true, batch, units, inputs, x.data(), &p.weight, S::zero(), out.data_mut());
                for row in out.data_mut().chunks_mut(units) {
                    for (v, b) in row.iter_mut().zip(&p.bias) {
                        *v = *v + *b;
                    }
                }
            }
        }
        if activation_of(&layer) == Some(Activation::Relu) {
            out.data_mut()
                .iter_mut()
                .for_each(|v| *v = v.max(S::zero()));
        }
        let k = self.config.output_scale;
        if i + 1 == self.config.layers.len() && k != 1.0 {
            let k = S::from_f64(k);
            out.data_mut().iter_mut().for_each(|v| *v = *v * k);
        }
        (out, argmax)
    }

    /// Mean-squared-error loss of `pass` against `targets` and its gradient
    /// with respect to every parameter.
    pub fn backward(&self, pass: &ForwardPass<S>, targets: &[S]) -> Result<(f64, Gradients<S>)> {
        let out = pass.output();
        let batch = out.batch();
        if targets.len() != batch || out.item_len() != 1 {
            return Err(Error::Shape {
                expected: vec![batch],
                actual: vec![targets.len()],
            });
        }
        let mut loss = 0.0;
        let scale = 2.0 / batch as f64 * self.config.output_scale;
        let mut grad: Vec<S> = out
            .data()
            .iter()
            .zip(targets)
            .map(|(y, t)| {
                let d = y.as_f64() - t.as_f64();
                loss += d * d;
                S::from_f64(scale * d)
            })
            .collect();
        loss /= batch as f64;

        let mut grads = Gradients {
            layers: self.params.iter().map(|p| p.zeros_like()).collect(),
        };
        for i in (0..self.config.layers.len()).rev() {
            let layer = self.config.layers[i];
            if activation_of(&layer) == Some(Activation::Relu) {
                for (g, a) in grad.iter_mut().zip(pass.activations[i + 1].data()) {
                    if *a <= S::zero() {
                        *g = S::zero();
                    }
                }
            }
            grad = self.layer_backward(i, pass, &grad, &mut grads.layers[i], i > 0);
        }
        Ok((loss, grads))
    }

    /// Accumulates parameter gradients of layer `i` and returns the gradient
    /// with respect to its input (empty when `need_input` is false).
    fn layer_backward(
        &self,
        i: usize,
        pass: &ForwardPass<S>,
        grad_out: &[S],
        g: &mut LayerParams<S>,
        need_input: bool,
    ) -> Vec<S> {
        let input = self.input_shape(i);
        let output = self.shapes[i];
        let x = &pass.activations[i];
        let batch = x.batch();
        let p = &self.params[i];
        match self.config.layers[i] {
            LayerSpec::Conv2d { kernel, .. } => {
                let ckk = input.channels * kernel[0] * kernel[1];
                let hw = output.height * output.width;
                let mut cols = vec![S::zero(); ckk * hw];
                let mut dcols = vec![S::zero(); ckk * hw];
                let mut dx = if need_input {
                    vec![S::zero(); x.data().len()]
                } else {
                    Vec::new()
                };
                let mut bias_acc = vec![0.0f64; output.channels];
                for b in 0..batch {
                    let go = &grad_out[b * output.len()..(b + 1) * output.len()];
                    im2col(x.item(b), input, kernel, output, &mut cols);
                    S::gemm(false, true, output.channels, ckk, hw, go, &cols, S::one(), &mut g.weight);
                    for (f, row) in go.chunks(hw).enumerate() {
                        bias_acc[f] += row.iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    if need_input {
                        S::gemm(true, false, ckk, hw, output.channels, &p.weight, go, S::zero(), &mut dcols);
                        let n = input.len();
                        col2im(&dcols, input, kernel, output, &mut dx[b * n..(b + 1) * n]);
                    }
                }
                for (gb, acc) in g.bias.iter_mut().zip(bias_acc) {
                    *gb = S::from_f64(acc);
                }
                dx
            }
            LayerSpec::MaxPool { .. } => {
                let idx = pass.argmax[i].as_ref().expect("pool layers record argmax");
                let mut dx = vec![S::zero(); x.data().len()];
                let (n_in, n_out) = (input.len(), output.len());
                for b in 0..batch {
                    for o in 0..n_out {
                        let src = b * n_in + idx[b * n_out + o] as usize;
                        dx[src] = dx[src] + grad_out[b * n_out + o];
                    }
                }
                dx
            }
            LayerSpec::Flatten => grad_out.to_vec(),
            LayerSpec::Dense { units, .. } => {
                let inputs = input.len();
                S::gemm(true, false, units, inputs, batch, grad_out, x.data(), S::zero(), &mut g.weight);
                for (u, gb) in g.bias.iter_mut().enumerate() {
                    let s: f64 = (0..batch).map(|b| grad_out[b * units + u].as_f64()).sum();
                    *gb = S::from_f64(s);
                }
                if need_input {
                    let mut dx = vec![S::zero(); batch * inputs];
                    S::gemm(false, false, batch, inputs, units, grad_out, &p.weight, S::zero(), &mut dx);
                    dx
                } else {
                    Vec::new()
                }
            }
        }
    }

    /// Mean squared error over a batch, accumulated in `f64`.
    pub fn mse(&self, x: &Tensor<S>, targets: &[S]) -> Result<f64> {
        let y = self.forward(x)?;
        if targets.len() != y.batch() {
            return Err(Error::Shape {
                expected: vec![y.batch()],
                actual: vec![targets.len()],
            });
        }
        Ok(y.data()
            .iter()
            .zip(targets)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum::<f64>()
            / targets.len() as f64)
    }

    /// Point estimates for a set of captures. Work is split into fixed-size
    /// chunks, so results do not depend on the thread count.
    pub fn predict(&self, frames: &[IqFrame]) -> Result<Vec<f64>> {
        let chunks: Vec<Vec<f64>> = frames
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| {
                let refs: Vec<&IqFrame> = chunk.iter().collect();
                let x = frames_to_tensor::<S>(&refs)?;
                Ok(self.forward(&x)?.data().iter().map(|v| v.as_f64()).collect())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }
}

/// Unfolds one `C x H x W` item into a `(C*kh*kw) x (Ho*Wo)` matrix.
fn im2col<S: Scalar>(x: &[S], input: Shape3, kernel: [usize; 2], output: Shape3, cols: &mut [S]) {
    let (ho, wo) = (output.height, output.width);
    let mut row = 0;
    for c in 0..input.channels {
        for ky in 0..kernel[0] {
            for kx in 0..kernel[1] {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for y in 0..ho {
                    let src = (c * input.height + y + ky) * input.width + kx;
                    dst[y * wo..(y + 1) * wo].copy_from_slice(&x[src..src + wo]);
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im<S: Scalar>(cols: &[S], input: Shape3, kernel: [usize; 2], output: Shape3, dx: &mut [S]) {
    let (ho, wo) = (output.height, output.width);
    let mut row = 0;
    for c in 0..input.channels {
        for ky in 0..kernel[0] {
            for kx in 0..kernel[1] {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for y in 0..ho {
                    let base = (c * input.height + y + ky) * input.width + kx;
                    for (d, s) in dx[base..base + wo].iter_mut().zip(&src[y * wo..(y + 1) * wo]) {
                        *d = *d + *s;
                    }
                }
                row += 1;
            }
        }
    }
}

fn max_pool<S: Scalar>(
    x: &[S],
    input: Shape3,
    size: [usize; 2],
    output: Shape3,
    out: &mut [S],
    argmax: &mut [u32],
) {
    let mut o = 0;
    for c in 0..input.channels {
        for oy in 0..output.height {
            for ox in 0..output.width {
                let mut best = S::neg_infinity();
                let mut best_i = 0;
                for ky in 0..size[0] {
                    let row = (c * input.height + oy * size[0] + ky) * input.width;
                    for kx in 0..size[1] {
                        let idx = row + ox * size[1] + kx;
                        if x[idx] > best {
                            best = x[idx];
                            best_i = idx;
                        }
                    }
                }
                out[o] = best;
                argmax[o] = best_i as u32;
                o += 1;
            }
        }
    }
}
