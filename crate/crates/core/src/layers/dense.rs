use rand_chacha::ChaCha8Rng;

use super::init::glorot;
use super::{Activation, Layer};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Fully connected layer, `act(x W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `[in, out]`
    pub weights: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Tensor::zeros(vec![inputs, outputs]),
            bias: Tensor::zeros(vec![outputs]),
            activation,
        }
    }

    pub(crate) fn init(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: glorot(rng, vec![inputs, outputs], inputs, outputs),
            bias: Tensor::zeros(vec![outputs]),
            activation,
        }
    }

    pub fn width(&self) -> usize {
        self.weights.shape()[1]
    }

    /// `[B, in] -> [B, out]`.
    pub fn apply(&self, g: &mut Graph<T>, x: Var, params: &[Var]) -> Result<Var, TensorError> {
        let xw = g.matmul(x, params[0])?;
        let z = g.add(xw, params[1])?;
        self.activation.apply(g, z)
    }
}

impl<T: Scalar> Layer<T> for DenseLayer<T> {
    fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("weights", &self.weights), ("bias", &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weights, &mut self.bias]
    }
}
