use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::init::glorot;
use super::Layer;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

/// LSTM layer. Gate blocks are packed along the last axis in the order
/// input, forget, cell candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<T> {
    /// `[D, 4U]`
    pub w_x: Tensor<T>,
    /// `[U, 4U]`
    pub w_h: Tensor<T>,
    /// `[4U]`
    pub bias: Tensor<T>,
}

/// GRU layer, `h_t = (1 - z) * n + z * h_{t-1}` with the candidate
/// `n = tanh(x W_n + (r * h_{t-1}) U_n + b_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer<T> {
    /// `[D, 3U]`, blocks update, reset, candidate.
    pub w_x: Tensor<T>,
    /// `[U, 2U]`, blocks update, reset.
    pub w_h: Tensor<T>,
    /// `[U, U]`, recurrent candidate weights applied to `r * h`.
    pub w_hn: Tensor<T>,
    /// `[3U]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecurrentLayer<T> {
    Lstm(LstmLayer<T>),
    Gru(GruLayer<T>),
}

impl<T: Scalar> LstmLayer<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer {
            w_x: Tensor::zeros(vec![input, 4 * hidden]),
            w_h: Tensor::zeros(vec![hidden, 4 * hidden]),
            bias: Tensor::zeros(vec![4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.shape()[0]
    }
}

impl<T: Scalar> GruLayer<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruLayer {
            w_x: Tensor::zeros(vec![input, 3 * hidden]),
            w_h: Tensor::zeros(vec![hidden, 2 * hidden]),
            w_hn: Tensor::zeros(vec![hidden, hidden]),
            bias: Tensor::zeros(vec![3 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hn.shape()[0]
    }
}

/// Per-step input projections `x W + b` for the whole sequence at once,
/// returned as `[B, L, G]`.
fn project_inputs<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
    let s = g.shape(x).to_vec();
    let gates = g.shape(w)[1];
    if s.len() != 3 || s[2] != g.shape(w)[0] {
        return Err(TensorError::ShapeMismatch {
            op: "recurrent",
            left: s,
            right: g.shape(w).to_vec(),
        });
    }
    let flat = g.reshape(x, &[s[0] * s[1], s[2]])?;
    let xw = g.matmul(flat, w)?;
    let z = g.add(xw, b)?;
    g.reshape(z, &[s[0], s[1], gates])
}

fn step<T: Scalar>(g: &mut Graph<T>, proj: Var, t: usize) -> Result<Var, TensorError> {
    let s = g.shape(proj).to_vec();
    let row = g.narrow(proj, 1, t, 1)?;
    g.reshape(row, &[s[0], s[2]])
}

fn stack_steps<T: Scalar>(g: &mut Graph<T>, steps: &[Var]) -> Result<Var, TensorError> {
    let mut rows = Vec::with_capacity(steps.len());
    for &h in steps {
        let s = g.shape(h).to_vec();
        rows.push(g.reshape(h, &[s[0], 1, s[1]])?);
    }
    g.concat(&rows, 1)
}

impl<T: Scalar> RecurrentLayer<T> {
    pub(crate) fn init(rng: &mut ChaCha8Rng, cell: CellKind, input: usize, hidden: usize) -> Self {
        match cell {
            CellKind::Lstm => {
                let mut bias = Tensor::zeros(vec![4 * hidden]);
                for v in &mut bias.data_mut()[hidden..2 * hidden] {
                    *v = T::one();
                }
                RecurrentLayer::Lstm(LstmLayer {
                    w_x: glorot(rng, vec![input, 4 * hidden], input, hidden),
                    w_h: glorot(rng, vec![hidden, 4 * hidden], hidden, hidden),
                    bias,
                })
            }
            CellKind::Gru => RecurrentLayer::Gru(GruLayer {
                w_x: glorot(rng, vec![input, 3 * hidden], input, hidden),
                w_h: glorot(rng, vec![hidden, 2 * hidden], hidden, hidden),
                w_hn: glorot(rng, vec![hidden, hidden], hidden, hidden),
                bias: Tensor::zeros(vec![3 * hidden]),
            }),
        }
    }

    pub fn cell(&self) -> CellKind {
        match self {
            RecurrentLayer::Lstm(_) => CellKind::Lstm,
            RecurrentLayer::Gru(_) => CellKind::Gru,
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            RecurrentLayer::Lstm(l) => l.hidden(),
            RecurrentLayer::Gru(l) => l.hidden(),
        }
    }

    /// `[B, L, D] -> [B, L, U]`, every hidden state from a zero initial state.
    pub fn apply(&self, g: &mut Graph<T>, x: Var, params: &[Var]) -> Result<Var, TensorError> {
        let s = g.shape(x).to_vec();
        let (batch, len) = (s[0], s[1]);
        let u = self.hidden();
        let mut h = g.input(Tensor::zeros(vec![batch, u]));
        let mut states = Vec::with_capacity(len);
        match self {
            RecurrentLayer::Lstm(_) => {
                let (w_x, w_h, b) = (params[0], params[1], params[2]);
                let proj = project_inputs(g, x, w_x, b)?;
                let mut c = g.input(Tensor::zeros(vec![batch, u]));
                for t in 0..len {
                    let xt = step(g, proj, t)?;
                    let hw = g.matmul(h, w_h)?;
                    let z = g.add(xt, hw)?;
                    let zi = g.narrow(z, 1, 0, u)?;
                    let zf = g.narrow(z, 1, u, u)?;
                    let zg = g.narrow(z, 1, 2 * u, u)?;
                    let zo = g.narrow(z, 1, 3 * u, u)?;
                    let i = g.sigmoid(zi)?;
                    let f = g.sigmoid(zf)?;
                    let cand = g.tanh(zg)?;
                    let o = g.sigmoid(zo)?;
                    let keep = g.mul(f, c)?;
                    let write = g.mul(i, cand)?;
                    c = g.add(keep, write)?;
                    let tc = g.tanh(c)?;
                    h = g.mul(o, tc)?;
                    states.push(h);
                }
            }
            RecurrentLayer::Gru(_) => {
                let (w_x, w_h, w_hn, b) = (params[0], params[1], params[2], params[3]);
                let proj = project_inputs(g, x, w_x, b)?;
                for t in 0..len {
                    let xt = step(g, proj, t)?;
                    let hw = g.matmul(h, w_h)?;
                    let xz = g.narrow(xt, 1, 0, u)?;
                    let xr = g.narrow(xt, 1, u, u)?;
                    let xn = g.narrow(xt, 1, 2 * u, u)?;
                    let hz = g.narrow(hw, 1, 0, u)?;
                    let hr = g.narrow(hw, 1, u, u)?;
                    let az = g.add(xz, hz)?;
                    let ar = g.add(xr, hr)?;
                    let z = g.sigmoid(az)?;
                    let r = g.sigmoid(ar)?;
                    let rh = g.mul(r, h)?;
                    let rhu = g.matmul(rh, w_hn)?;
                    let an = g.add(xn, rhu)?;
                    let n = g.tanh(an)?;
                    // (1 - z) * n + z * h == n + z * (h - n)
                    let diff = g.sub(h, n)?;
                    let zd = g.mul(z, diff)?;
                    h = g.add(n, zd)?;
                    states.push(h);
                }
            }
        }
        stack_steps(g, &states)
    }

    /// Unbatched forward: `[L, D] -> [L, U]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let shape = x.shape().to_vec();
        if shape.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "recurrent_forward",
                shape,
                reason: "expected [L, D]".into(),
            });
        }
        let mut g = Graph::new();
        let xv = g.input(x.clone().reshape(vec![1, shape[0], shape[1]])?);
        let params = self.bind(&mut g, false);
        let h = self.apply(&mut g, xv, &params)?;
        g.value(h).clone().reshape(vec![shape[0], self.hidden()])
    }
}

impl<T: Scalar> Layer<T> for RecurrentLayer<T> {
    fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            RecurrentLayer::Lstm(l) => vec![("w_x", &l.w_x), ("w_h", &l.w_h), ("bias", &l.bias)],
            RecurrentLayer::Gru(l) => vec![("w_x", &l.w_x), ("w_h", &l.w_h), ("w_hn", &l.w_hn), ("bias", &l.bias)],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            RecurrentLayer::Lstm(l) => vec![&mut l.w_x, &mut l.w_h, &mut l.bias],
            RecurrentLayer::Gru(l) => vec![&mut l.w_x, &mut l.w_h, &mut l.w_hn, &mut l.bias],
        }
    }
}
