use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Half-width of the Glorot-uniform interval, `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fills a tensor with draws from `U(-a, a)`, `a` the Glorot bound.
pub(crate) fn glorot<T: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let a = glorot_bound(fan_in, fan_out);
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-a..a)))
}
