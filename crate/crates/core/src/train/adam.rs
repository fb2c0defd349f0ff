use super::{TrainConfig, TrainError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Vec<T>> = params.into_iter().map(|p| vec![T::zero(); p.len()]).collect();
        AdamState { v: m.clone(), m, t: 0 }
    }
}

/// One bias-corrected Adam update.
///
/// Every gradient is checked before anything is modified; a non-finite entry
/// aborts the step and names the parameter.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Vec<T>],
    names: &[String],
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "optimizer state mirrors parameters");
    for (i, g) in grads.iter().enumerate() {
        assert_eq!(g.len(), params[i].len(), "gradient length mismatch");
        if g.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                name: names.get(i).cloned().unwrap_or_else(|| format!("param{i}")),
            });
        }
    }
    state.t += 1;
    let b1 = T::of(config.beta1);
    let b2 = T::of(config.beta2);
    let lr = T::of(config.learning_rate);
    let eps = T::of(config.epsilon);
    let one = T::one();
    let c1 = one - b1.powi(state.t as i32);
    let c2 = one - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
