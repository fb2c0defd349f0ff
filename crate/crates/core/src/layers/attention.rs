use rand_chacha::ChaCha8Rng;

use super::init::glorot;
use super::Layer;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Additive attention over time steps.
///
/// `e_t = v . tanh(W_a h_t + b_a)`, `alpha = softmax(e)`, and the context is
/// `sum_t alpha_t h_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer<T> {
    /// `[U, U]`
    pub w_a: Tensor<T>,
    /// `[U]`
    pub b_a: Tensor<T>,
    /// `[U]`
    pub v: Tensor<T>,
}

impl<T: Scalar> AttentionLayer<T> {
    pub fn zeros(hidden: usize) -> Self {
        AttentionLayer {
            w_a: Tensor::zeros(vec![hidden, hidden]),
            b_a: Tensor::zeros(vec![hidden]),
            v: Tensor::zeros(vec![hidden]),
        }
    }

    pub(crate) fn init(rng: &mut ChaCha8Rng, hidden: usize) -> Self {
        AttentionLayer {
            w_a: glorot(rng, vec![hidden, hidden], hidden, hidden),
            b_a: Tensor::zeros(vec![hidden]),
            v: glorot(rng, vec![hidden], hidden, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_a.len()
    }

    /// `[B, L, U] -> (context [B, U], weights [B, L])`.
    pub fn apply(&self, g: &mut Graph<T>, hseq: Var, params: &[Var]) -> Result<(Var, Var), TensorError> {
        let (w_a, b_a, v) = (params[0], params[1], params[2]);
        let s = g.shape(hseq).to_vec();
        if s.len() != 3 || s[1] == 0 || s[2] != self.hidden() {
            return Err(TensorError::InvalidShape {
                op: "attention",
                shape: s,
                reason: format!("expected [B, L >= 1, {}]", self.hidden()),
            });
        }
        let (b, l, u) = (s[0], s[1], s[2]);
        let flat = g.reshape(hseq, &[b * l, u])?;
        let proj = g.matmul(flat, w_a)?;
        let proj = g.add(proj, b_a)?;
        let act = g.tanh(proj)?;
        let v_col = g.reshape(v, &[u, 1])?;
        let scores = g.matmul(act, v_col)?;
        let scores = g.reshape(scores, &[b, l])?;
        let alpha = g.softmax(scores, 1)?;
        let alpha_col = g.reshape(alpha, &[b, l, 1])?;
        let weighted = g.mul(alpha_col, hseq)?;
        let context = g.sum_axis(weighted, 1)?;
        Ok((context, alpha))
    }

    /// Unbatched forward: `[L, U] -> (context [U], weights [L])`.
    pub fn forward(&self, hseq: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
        let shape = hseq.shape().to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(TensorError::InvalidShape {
                op: "attention_forward",
                shape,
                reason: "expected a non-empty [L, U] sequence".into(),
            });
        }
        let mut g = Graph::new();
        let h = g.input(hseq.clone().reshape(vec![1, shape[0], shape[1]])?);
        let params = self.bind(&mut g, false);
        let (ctx, alpha) = self.apply(&mut g, h, &params)?;
        Ok((
            g.value(ctx).clone().reshape(vec![shape[1]])?,
            g.value(alpha).clone().reshape(vec![shape[0]])?,
        ))
    }
}

impl<T: Scalar> Layer<T> for AttentionLayer<T> {
    fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("w_a", &self.w_a), ("b_a", &self.b_a), ("v", &self.v)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.w_a, &mut self.b_a, &mut self.v]
    }
}
