//! Dense layers and inverted dropout.

use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::{matmul_into, Matrix};
use super::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, m: &mut Matrix) {
        if self == Activation::Relu {
            for v in m.as_mut_slice() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

/// `y = activation(x · W + b)` applied to a row batch.
///
/// `weights` has shape `(in, out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::Shape {
                context: "DenseLayer::new",
                left: weights.shape(),
                right: (bias.len(), 1),
            });
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weights: Matrix::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// He-uniform weights for ReLU layers, Glorot-uniform otherwise; zero bias.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / in_dim as f64).sqrt(),
            Activation::Identity => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite init limit");
        let mut weights = Matrix::zeros(in_dim, out_dim);
        for w in weights.as_mut_slice() {
            *w = dist.sample(rng);
        }
        Self {
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Affine part only: `x · W + b`.
    pub fn pre_activation(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_dim() {
            return Err(Error::Shape {
                context: "dense_forward",
                left: input.shape(),
                right: self.weights.shape(),
            });
        }
        let mut out = Matrix::zeros(input.rows(), self.out_dim());
        for r in 0..out.rows() {
            out.row_mut(r).copy_from_slice(&self.bias);
        }
        matmul_into(input, &self.weights, &mut out);
        Ok(out)
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let mut out = self.pre_activation(input)?;
        self.activation.apply(&mut out);
        Ok(out)
    }

    pub(crate) fn activate(&self, pre: &Matrix) -> Matrix {
        let mut out = pre.clone();
        self.activation.apply(&mut out);
        out
    }
}

/// Dropout rate `p` in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DropoutSpec {
    rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(Self { rate })
    }

    pub const fn disabled() -> Self {
        Self { rate: 0.0 }
    }

    #[inline]
    pub fn rate(self) -> f64 {
        self.rate
    }

    /// Scale applied to kept units, `1 / (1 - p)`.
    #[inline]
    pub fn keep_scale(self) -> f64 {
        1.0 / (1.0 - self.rate)
    }

    #[inline]
    pub fn is_active(self) -> bool {
        self.rate > 0.0
    }
}

impl TryFrom<f64> for DropoutSpec {
    type Error = Error;

    fn try_from(rate: f64) -> Result<Self> {
        DropoutSpec::new(rate)
    }
}

impl From<DropoutSpec> for f64 {
    fn from(spec: DropoutSpec) -> f64 {
        spec.rate
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, else `1/(1-p)`.
///
/// Draws one uniform per entry in row-major order; a zero rate draws nothing.
pub fn dropout_mask(rows: usize, cols: usize, spec: DropoutSpec, rng: &mut RngStream) -> Matrix {
    if !spec.is_active() {
        return Matrix::filled(rows, cols, 1.0);
    }
    let scale = spec.keep_scale();
    let mut mask = Matrix::zeros(rows, cols);
    for m in mask.as_mut_slice() {
        *m = if rng.bernoulli(spec.rate()) { 0.0 } else { scale };
    }
    mask
}

/// Applies a freshly sampled mask in place, consuming the same draws as [`dropout_mask`].
pub(crate) fn apply_dropout(m: &mut Matrix, spec: DropoutSpec, rng: &mut RngStream) {
    if !spec.is_active() {
        return;
    }
    let scale = spec.keep_scale();
    let p = spec.rate();
    for v in m.as_mut_slice() {
        if rng.bernoulli(p) {
            *v = 0.0;
        } else {
            *v *= scale;
        }
    }
}
