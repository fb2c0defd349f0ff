use rand_chacha::ChaCha8Rng;

use super::init::glorot;
use super::{Activation, Layer};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Valid-padding 1-D convolution over time with `F` filters.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dLayer<T> {
    /// `[F, C_in, K]`
    pub kernels: Tensor<T>,
    /// `[F]`
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Scalar> Conv1dLayer<T> {
    pub fn zeros(in_channels: usize, filters: usize, kernel: usize, activation: Activation) -> Self {
        Conv1dLayer {
            kernels: Tensor::zeros(vec![filters, in_channels, kernel]),
            bias: Tensor::zeros(vec![filters]),
            activation,
        }
    }

    pub(crate) fn init(
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        activation: Activation,
    ) -> Self {
        Conv1dLayer {
            kernels: glorot(
                rng,
                vec![filters, in_channels, kernel],
                in_channels * kernel,
                filters * kernel,
            ),
            bias: Tensor::zeros(vec![filters]),
            activation,
        }
    }

    pub fn filters(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[2]
    }

    /// `[B, W, C_in] -> [B, W - K + 1, F]` on bound parameters.
    pub fn apply(&self, g: &mut Graph<T>, x: Var, params: &[Var]) -> Result<Var, TensorError> {
        let z = g.conv1d(x, params[0], params[1])?;
        self.activation.apply(g, z)
    }

    /// Unbatched forward: `[W, C_in] -> [W - K + 1, F]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let mut g = Graph::new();
        let shape = x.shape().to_vec();
        if shape.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "conv1d_forward",
                shape,
                reason: "expected [W, C]".into(),
            });
        }
        let xv = g.input(x.clone().reshape(vec![1, shape[0], shape[1]])?);
        let params = self.bind(&mut g, false);
        let y = self.apply(&mut g, xv, &params)?;
        let out = g.value(y).clone();
        let s = out.shape().to_vec();
        out.reshape(vec![s[1], s[2]])
    }
}

impl<T: Scalar> Layer<T> for Conv1dLayer<T> {
    fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("kernels", &self.kernels), ("bias", &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.kernels, &mut self.bias]
    }
}
