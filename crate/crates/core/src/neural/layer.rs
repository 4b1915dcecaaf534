//! Dense layers with explicit forward and backward passes.
//!
//! Batches are `(examples, features)` arrays. Loss functions carry
//! their own batch normalization, so layer gradients are plain sums
//! over the batch and match finite differences of the composed loss.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::VfError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fully connected layer; weights are `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

/// Parameter-shaped gradient of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Cached values from one layer's forward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    /// Layer input, (batch, in).
    pub input: Array2<f64>,
    /// Pre-activation, (batch, out).
    pub pre: Array2<f64>,
}

impl Dense {
    /// Glorot-uniform initialization: U(+-sqrt(6 / (fan_in + fan_out))),
    /// drawn row-major from the given stream, then the bias (zeros).
    pub fn init(out_dim: usize, in_dim: usize, act: Activation, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut w = Array2::zeros((out_dim, in_dim));
        for v in w.iter_mut() {
            *v = (rng.gen::<f64>() * 2.0 - 1.0) * limit;
        }
        Dense { w, b: Array1::zeros(out_dim), act }
    }

    pub fn zeros(out_dim: usize, in_dim: usize, act: Activation) -> Self {
        Dense { w: Array2::zeros((out_dim, in_dim)), b: Array1::zeros(out_dim), act }
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    /// Forward pass over a batch: activation(x W^T + b).
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, DenseCache), VfError> {
        if x.ncols() != self.in_dim() {
            return Err(VfError::Dimension { expected: self.in_dim(), got: x.ncols() });
        }
        let pre = x.dot(&self.w.t()) + &self.b;
        let out = match self.act {
            Activation::Relu => pre.mapv(|v| v.max(0.0)),
            Activation::Identity => pre.clone(),
        };
        Ok((out, DenseCache { input: x.clone(), pre }))
    }

    /// Backward pass: given dL/d(output), produce parameter gradients and
    /// dL/d(input) for the previous layer.
    pub fn backward(&self, cache: &DenseCache, d_out: &Array2<f64>) -> (DenseGrad, Array2<f64>) {
        // d_pre = d_out * act'(pre)
        let d_pre = match self.act {
            Activation::Relu => {
                let mask = cache.pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                d_out * &mask
            }
            Activation::Identity => d_out.clone(),
        };
        // dW_{o,i} = sum_batch d_pre_{b,o} * input_{b,i}
        let dw = d_pre.t().dot(&cache.input);
        let db = d_pre.sum_axis(Axis(0));
        // dx_{b,i} = sum_o d_pre_{b,o} * W_{o,i}
        let dx = d_pre.dot(&self.w);
        (DenseGrad { w: dw, b: db }, dx)
    }

    pub fn grad_zeros(&self) -> DenseGrad {
        DenseGrad { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.raw_dim()) }
    }
}
