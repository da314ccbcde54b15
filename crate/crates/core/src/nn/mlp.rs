//! Layer stacks with hand-derived backprop.
//!
//! Dropout sits after every hidden layer (all layers but the last). The
//! last layer of a stack is never masked, so an encoder's latent
//! projection and a head's scalar output are always deterministic given
//! the upstream activations.

use serde::{Deserialize, Serialize};

use super::layer::{apply_dropout, dropout_mask, Activation, DenseLayer, DropoutSpec};
use super::matrix::Matrix;
use super::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Activations saved by a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input fed to each layer (post-dropout for every layer but the first).
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
    /// Mask applied after each hidden layer, if any.
    masks: Vec<Option<Matrix>>,
    output: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn masks(&self) -> &[Option<Matrix>] {
        &self.masks
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }
}

/// Parameter gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub weights: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
}

impl MlpGradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.in_dim(), l.out_dim()))
                .collect(),
            bias: mlp.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    /// Flat views in the same order as [`Mlp::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("layer stack must not be empty".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape {
                    context: "Mlp::new",
                    left: pair[0].weights.shape(),
                    right: pair[1].weights.shape(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// ReLU hidden layers of the given widths followed by a linear output layer.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be >= 1".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &w in hidden {
            layers.push(DenseLayer::init(prev, w, Activation::Relu, rng));
            prev = w;
        }
        layers.push(DenseLayer::init(prev, output_dim, Activation::Identity, rng));
        Mlp::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Number of hidden units that carry a dropout mask.
    pub fn dropout_units(&self) -> usize {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim())
            .sum()
    }

    /// Widths of the masked hidden layers.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Flat mutable parameter views: weights then bias for each layer.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            out.push(layer.weights.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            out.push(layer.weights.as_slice());
            out.push(layer.bias.as_slice());
        }
        out
    }

    /// Inference pass. With `dropout` set, a fresh mask is drawn per hidden layer.
    pub fn forward(
        &self,
        input: &Matrix,
        dropout: Option<(DropoutSpec, &mut RngStream)>,
    ) -> Result<Matrix> {
        let last = self.layers.len() - 1;
        let mut dropout = dropout;
        let mut h = self.layers[0].forward(input)?;
        if last > 0 {
            if let Some((spec, rng)) = dropout.as_mut() {
                apply_dropout(&mut h, *spec, rng);
            }
        }
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.forward(&h)?;
            if i < last {
                if let Some((spec, rng)) = dropout.as_mut() {
                    apply_dropout(&mut h, *spec, rng);
                }
            }
        }
        Ok(h)
    }

    /// Training pass that records activations and the sampled masks.
    pub fn forward_cached(
        &self,
        input: &Matrix,
        dropout: Option<(DropoutSpec, &mut RngStream)>,
    ) -> Result<ForwardCache> {
        let mut dropout = dropout;
        let masks: Vec<Option<Matrix>> = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| {
                dropout
                    .as_mut()
                    .filter(|(spec, _)| spec.is_active())
                    .map(|(spec, rng)| dropout_mask(input.rows(), l.out_dim(), *spec, rng))
            })
            .collect();
        self.forward_with_masks(input, &masks)
    }

    /// Forward pass with caller-supplied masks (`None` = unmasked layer).
    pub fn forward_with_masks(&self, input: &Matrix, masks: &[Option<Matrix>]) -> Result<ForwardCache> {
        let last = self.layers.len() - 1;
        if masks.len() != last {
            return Err(Error::InvalidArgument(format!(
                "expected {last} hidden masks, got {}",
                masks.len()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.pre_activation(&h)?;
            let mut a = layer.activate(&z);
            if i < last {
                if let Some(mask) = &masks[i] {
                    a.hadamard_assign(mask)?;
                }
            }
            inputs.push(std::mem::replace(&mut h, a));
            pre.push(z);
        }
        Ok(ForwardCache {
            inputs,
            pre,
            masks: masks.to_vec(),
            output: h,
        })
    }

    /// Backprop `d_output = ∂L/∂output` through a cached pass.
    ///
    /// Returns parameter gradients and `∂L/∂input`. The masks recorded in the
    /// cache gate the backward path exactly as they gated the forward path.
    pub fn backward(&self, cache: &ForwardCache, d_output: &Matrix) -> Result<(MlpGradients, Matrix)> {
        if d_output.shape() != cache.output.shape() {
            return Err(Error::Shape {
                context: "Mlp::backward",
                left: d_output.shape(),
                right: cache.output.shape(),
            });
        }
        let last = self.layers.len() - 1;
        let mut grads = MlpGradients::zeros_like(self);
        let mut d = d_output.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i < last {
                if let Some(mask) = &cache.masks[i] {
                    d.hadamard_assign(mask)?;
                }
            }
            if layer.activation == Activation::Relu {
                for (g, &z) in d.as_mut_slice().iter_mut().zip(cache.pre[i].as_slice()) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            grads.weights[i] = cache.inputs[i].t_matmul(&d)?;
            grads.bias[i] = d.col_sums();
            d = d.matmul_t(&layer.weights)?;
        }
        Ok((grads, d))
    }
}
