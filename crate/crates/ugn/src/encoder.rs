//! Graph convolutional encoder: stacked `ReLU(Ahat * H * W)` layers with
//! no bias terms.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Result, UgnError};
use crate::tensor::Tensor;

/// Uniform Glorot initialization: `U(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::rand_uniform(vec![fan_in, fan_out], -a, a, rng)
}

/// Encoder weights, one matrix per layer.
#[derive(Debug, Clone)]
pub struct Encoder {
    weights: Vec<Tensor>,
}

impl Encoder {
    /// `dims` lists the feature width at each depth: `dims[0]` is the input
    /// width and `dims[k]` the latent width after `k` layers.
    pub fn init(dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(UgnError::Config(
                "encoder needs at least one layer (two dims)".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(UgnError::Config(format!(
                "encoder dims must be positive, got {dims:?}"
            )));
        }
        let weights = dims
            .windows(2)
            .map(|w| glorot_uniform(w[0], w[1], rng))
            .collect();
        Ok(Encoder { weights })
    }

    pub fn from_weights(weights: Vec<Tensor>) -> Result<Self> {
        if weights.is_empty() {
            return Err(UgnError::Config("encoder has no layers".into()));
        }
        for pair in weights.windows(2) {
            if pair[0].shape()[1] != pair[1].shape()[0] {
                return Err(UgnError::shape(
                    "encoder layer widths",
                    pair[0].shape(),
                    pair[1].shape(),
                ));
            }
        }
        Ok(Encoder { weights })
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn latent_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].shape()[1]
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    /// Register the weights as trainable leaves on `tape`.
    pub fn register<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.weights.iter().map(|w| tape.param(w.clone())).collect()
    }

    /// Forward pass producing the `n x latent_dim` node embedding matrix.
    ///
    /// `ahat` is the normalized adjacency and `features` the `n x dims[0]`
    /// input matrix; both are recorded as constants, while `weight_vars`
    /// must come from [`Self::register`] on the same tape.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        ahat: &Tensor,
        features: &Tensor,
        weight_vars: &[Var<'t>],
    ) -> Result<Var<'t>> {
        if features.shape().len() != 2 || features.shape()[1] != self.input_dim() {
            return Err(UgnError::shape(
                "encoder input features",
                features.shape(),
                self.weights[0].shape(),
            ));
        }
        if ahat.shape() != [features.shape()[0], features.shape()[0]] {
            return Err(UgnError::shape(
                "encoder adjacency",
                ahat.shape(),
                features.shape(),
            ));
        }
        if weight_vars.len() != self.weights.len() {
            return Err(UgnError::Config(format!(
                "expected {} weight vars, got {}",
                self.weights.len(),
                weight_vars.len()
            )));
        }
        let a = tape.leaf(ahat.clone());
        let mut h = tape.leaf(features.clone());
        for w in weight_vars {
            h = a.matmul(h)?.matmul(*w)?.relu();
        }
        Ok(h)
    }
}
