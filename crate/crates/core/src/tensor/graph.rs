use super::{Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type Derivative<T> = Box<dyn Fn(T) -> T>;

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax { input: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    SumAxis { input: Var, axis: usize },
    Reshape(Var),
    Narrow { input: Var, axis: usize, start: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Conv1d { input: Var, kernels: Var, bias: Var },
    Map { input: Var, derivative: Derivative<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation tape for one forward pass.
///
/// Nodes are appended in execution order, so node indices are a topological
/// order by construction. A graph supports exactly one [`Graph::backward`].
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    #[inline]
    fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
        }
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>, TensorError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    left: a.to_vec(),
                    right: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Per-output-dimension strides into an input that broadcasts to `out`.
fn broadcast_strides(input: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - input.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for d in (0..input.len()).rev() {
        strides[d + offset] = if input[d] == 1 { 0 } else { acc };
        acc *= input[d];
    }
    strides
}

fn broadcast_for_each(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

fn check_finite<T: Scalar>(op: &'static str, data: &[T]) -> Result<(), TensorError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. Gradients are only tracked for `requires_grad` leaves
    /// and for nodes depending on them.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Constant input, no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Trainable parameter.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward pass with respect to `v`, if `v` was
    /// reached by it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, TensorError> {
        let op = kind.name();
        let va = self.value(a);
        let vb = self.value(b);
        let (shape, data) = if va.shape() == vb.shape() {
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| kind.apply(x, y))
                .collect::<Vec<_>>();
            (va.shape().to_vec(), data)
        } else {
            let out = broadcast_shape(op, va.shape(), vb.shape())?;
            let sa = broadcast_strides(va.shape(), &out);
            let sb = broadcast_strides(vb.shape(), &out);
            let mut data = vec![T::zero(); out.iter().product()];
            let (da, db) = (va.data(), vb.data());
            broadcast_for_each(&out, &sa, &sb, |o, ia, ib| {
                data[o] = kind.apply(da[ia], db[ib]);
            });
            (out, data)
        };
        check_finite(op, &data)?;
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(a) || self.rg(b);
        let node = match kind {
            Binary::Add => Op::Add(a, b),
            Binary::Sub => Op::Sub(a, b),
            Binary::Mul => Op::Mul(a, b),
        };
        Ok(self.push(value, node, rg))
    }

    /// Elementwise sum with trailing-dimension broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Sub, a, b)
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var, TensorError> {
        let va = self.value(a);
        let data: Vec<T> = va.data().iter().map(|&x| x * factor).collect();
        check_finite("scale", &data)?;
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Scale(a, factor), rg))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let va = self.value(a);
        let vb = self.value(b);
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![T::zero(); m * n];
        matmul_into(va.data(), vb.data(), &mut data, m, k, n);
        check_finite("matmul", &data)?;
        let value = Tensor::new(vec![m, n], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var, TensorError> {
        let va = self.value(a);
        let data: Vec<T> = va.data().iter().map(|&x| f(x)).collect();
        check_finite(name, &data)?;
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, op, rg))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("relu", a, |x| x.max(T::zero()), Op::Relu(a))
    }

    /// Elementwise map with a caller-supplied derivative `df(x)`.
    pub fn map(&mut self, a: Var, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Result<Var, TensorError> {
        self.unary(
            "map",
            a,
            f,
            Op::Map {
                input: a,
                derivative: Box::new(df),
            },
        )
    }

    /// Softmax along `axis`, stabilised by subtracting the per-slice maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                shape,
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = va.data();
        let mut data = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let mut max = T::neg_infinity();
                for j in 0..n {
                    max = max.max(x[at(j)]);
                }
                let mut total = T::zero();
                for j in 0..n {
                    let e = (x[at(j)] - max).exp();
                    data[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    data[at(j)] /= total;
                }
            }
        }
        check_finite("softmax", &data)?;
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax { input: a, axis }, rg))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let total: T = self.value(a).data().iter().copied().sum();
        check_finite("sum", &[total])?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(total), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "mean",
                shape: va.shape().to_vec(),
                reason: "mean of an empty tensor".into(),
            });
        }
        let total: T = va.data().iter().copied().sum();
        let mean = total / T::of(va.len() as f64);
        check_finite("mean", &[mean])?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(mean), Op::Mean(a), rg))
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "sum_axis",
                axis,
                shape,
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = va.data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &x[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, &s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        check_finite("sum_axis", &data)?;
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SumAxis { input: a, axis }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let va = self.value(a);
        let numel: usize = shape.iter().product();
        if numel != va.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: va.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let value = Tensor::new(shape.to_vec(), va.data().to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "narrow",
                axis,
                shape,
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::InvalidShape {
                op: "narrow",
                shape,
                reason: format!("range {start}..{} out of bounds on axis {axis}", start + len),
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = va.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            data.extend_from_slice(&x[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Narrow { input: a, axis, start }, rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let Some(&first) = inputs.first() else {
            return Err(TensorError::InvalidShape {
                op: "concat",
                shape: Vec::new(),
                reason: "no inputs".into(),
            });
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                shape: base,
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let vv = self.value(v);
                let chunk = vv.shape()[axis] * inner;
                data.extend_from_slice(&vv.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let value = Tensor::new(out_shape, data)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Valid 1-D convolution over time.
    ///
    /// `input` is `[B, W, C]`, `kernels` is `[F, C, K]`, `bias` is `[F]`; the
    /// result is `[B, W - K + 1, F]` (no activation).
    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var, TensorError> {
        let (xs, ks, bs) = (
            self.shape(input).to_vec(),
            self.shape(kernels).to_vec(),
            self.shape(bias).to_vec(),
        );
        if xs.len() != 3 || ks.len() != 3 || xs[2] != ks[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                left: xs,
                right: ks,
            });
        }
        if bs != [ks[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                left: ks,
                right: bs,
            });
        }
        let (b, w, c) = (xs[0], xs[1], xs[2]);
        let (f, k) = (ks[0], ks[2]);
        if k == 0 || w < k {
            return Err(TensorError::InvalidShape {
                op: "conv1d",
                shape: xs,
                reason: format!("window of {w} samples is shorter than kernel {k}"),
            });
        }
        let wo = w - k + 1;
        let x = self.value(input).data();
        let kern = self.value(kernels).data();
        let bias_v = self.value(bias).data();
        let mut data = vec![T::zero(); b * wo * f];
        for bi in 0..b {
            for t in 0..wo {
                let out = &mut data[(bi * wo + t) * f..(bi * wo + t + 1) * f];
                for (fi, o) in out.iter_mut().enumerate() {
                    let mut acc = bias_v[fi];
                    for ci in 0..c {
                        let krow = &kern[(fi * c + ci) * k..(fi * c + ci + 1) * k];
                        for (ki, &kv) in krow.iter().enumerate() {
                            acc += x[(bi * w + t + ki) * c + ci] * kv;
                        }
                    }
                    *o = acc;
                }
            }
        }
        check_finite("conv1d", &data)?;
        let value = Tensor::new(vec![b, wo, f], data)?;
        let rg = self.rg(input) || self.rg(kernels) || self.rg(bias);
        Ok(self.push(value, Op::Conv1d { input, kernels, bias }, rg))
    }

    /// Reverse sweep from a single-element `loss`, accumulating `d loss / d v`
    /// into every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                check_finite("backward", g)?;
                debug_assert_eq!(g.len(), self.nodes[i].value.len());
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let negate = matches!(node.op, Op::Sub(..));
                let out = node.value.shape();
                for (v, sign) in [(a, false), (b, negate)] {
                    if !wants(v) {
                        continue;
                    }
                    let vs = val(v).shape();
                    let dst = slot(grads, v, val(v).len());
                    if vs == out {
                        for (d, &gv) in dst.iter_mut().zip(g) {
                            if sign {
                                *d -= gv
                            } else {
                                *d += gv
                            }
                        }
                    } else {
                        let sv = broadcast_strides(vs, out);
                        let zero = vec![0; out.len()];
                        broadcast_for_each(
                            out,
                            &sv,
                            &zero,
                            |o, iv, _| {
                                if sign {
                                    dst[iv] -= g[o]
                                } else {
                                    dst[iv] += g[o]
                                }
                            },
                        );
                    }
                }
            }
            &Op::Mul(a, b) => {
                let out = node.value.shape();
                let (va, vb) = (val(a), val(b));
                let same = va.shape() == out && vb.shape() == out;
                let sa = broadcast_strides(va.shape(), out);
                let sb = broadcast_strides(vb.shape(), out);
                if wants(a) {
                    let dst = slot(grads, a, va.len());
                    if same {
                        for ((d, &gv), &y) in dst.iter_mut().zip(g).zip(vb.data()) {
                            *d += gv * y;
                        }
                    } else {
                        let yb = vb.data();
                        broadcast_for_each(out, &sa, &sb, |o, ia, ib| dst[ia] += g[o] * yb[ib]);
                    }
                }
                if wants(b) {
                    let dst = slot(grads, b, vb.len());
                    if same {
                        for ((d, &gv), &x) in dst.iter_mut().zip(g).zip(va.data()) {
                            *d += gv * x;
                        }
                    } else {
                        let xa = va.data();
                        broadcast_for_each(out, &sa, &sb, |o, ia, ib| dst[ib] += g[o] * xa[ia]);
                    }
                }
            }
            &Op::Scale(a, factor) => {
                if wants(a) {
                    let dst = slot(grads, a, g.len());
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv * factor;
                    }
                }
            }
            &Op::MatMul(a, b) => {
                let (va, vb) = (val(a), val(b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if wants(a) {
                    // dA = G · Bᵀ
                    let bd = vb.data();
                    let dst = slot(grads, a, m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let mut acc = T::zero();
                            for (&x, &y) in grow.iter().zip(brow) {
                                acc += x * y;
                            }
                            dst[i * k + p] += acc;
                        }
                    }
                }
                if wants(b) {
                    // dB = Aᵀ · G
                    let ad = va.data();
                    let dst = slot(grads, b, k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == T::zero() {
                                continue;
                            }
                            for (d, &gv) in dst[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += aip * gv;
                            }
                        }
                    }
                }
            }
            &Op::Tanh(a) => {
                if wants(a) {
                    let y = node.value.data();
                    let dst = slot(grads, a, g.len());
                    for ((d, &gv), &yv) in dst.iter_mut().zip(g).zip(y) {
                        *d += gv * (T::one() - yv * yv);
                    }
                }
            }
            &Op::Sigmoid(a) => {
                if wants(a) {
                    let y = node.value.data();
                    let dst = slot(grads, a, g.len());
                    for ((d, &gv), &yv) in dst.iter_mut().zip(g).zip(y) {
                        *d += gv * yv * (T::one() - yv);
                    }
                }
            }
            &Op::Relu(a) => {
                if wants(a) {
                    let x = val(a).data();
                    let dst = slot(grads, a, g.len());
                    for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(x) {
                        if xv > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Map { input, derivative } => {
                if wants(*input) {
                    let x = val(*input).data();
                    let dst = slot(grads, *input, g.len());
                    for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(x) {
                        *d += gv * derivative(xv);
                    }
                }
            }
            &Op::Softmax { input, axis } => {
                if wants(input) {
                    let y = node.value.data();
                    let (outer, n, inner) = split_axis(node.value.shape(), axis);
                    let dst = slot(grads, input, g.len());
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * n * inner + j * inner + i;
                            let mut dot = T::zero();
                            for j in 0..n {
                                dot += g[at(j)] * y[at(j)];
                            }
                            for j in 0..n {
                                dst[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                if wants(a) {
                    let dst = slot(grads, a, val(a).len());
                    for d in dst.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            &Op::Mean(a) => {
                if wants(a) {
                    let len = val(a).len();
                    let share = g[0] / T::of(len as f64);
                    let dst = slot(grads, a, len);
                    for d in dst.iter_mut() {
                        *d += share;
                    }
                }
            }
            &Op::SumAxis { input, axis } => {
                if wants(input) {
                    let (outer, n, inner) = split_axis(val(input).shape(), axis);
                    let dst = slot(grads, input, outer * n * inner);
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for j in 0..n {
                            let row = &mut dst[(o * n + j) * inner..(o * n + j + 1) * inner];
                            for (d, &s) in row.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            &Op::Reshape(a) => {
                if wants(a) {
                    let dst = slot(grads, a, g.len());
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            &Op::Narrow { input, axis, start } => {
                if wants(input) {
                    let (outer, n, inner) = split_axis(val(input).shape(), axis);
                    let len = node.value.shape()[axis];
                    let dst = slot(grads, input, outer * n * inner);
                    for o in 0..outer {
                        let to = (o * n + start) * inner;
                        let from = o * len * inner;
                        for (d, &s) in dst[to..to + len * inner].iter_mut().zip(&g[from..from + len * inner]) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let n = val(v).shape()[*axis];
                    if wants(v) {
                        let dst = slot(grads, v, outer * n * inner);
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            for (d, &s) in dst[o * n * inner..(o + 1) * n * inner]
                                .iter_mut()
                                .zip(&g[from..from + n * inner])
                            {
                                *d += s;
                            }
                        }
                    }
                    offset += n;
                }
            }
            &Op::Conv1d { input, kernels, bias } => {
                let xs = val(input).shape();
                let (b, w, c) = (xs[0], xs[1], xs[2]);
                let ks = val(kernels).shape();
                let (f, k) = (ks[0], ks[2]);
                let wo = w - k + 1;
                let x = val(input).data();
                let kern = val(kernels).data();
                if wants(bias) {
                    let dst = slot(grads, bias, f);
                    for row in g.chunks_exact(f) {
                        for (d, &gv) in dst.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
                if wants(kernels) {
                    let dst = slot(grads, kernels, f * c * k);
                    for bi in 0..b {
                        for t in 0..wo {
                            for fi in 0..f {
                                let gv = g[(bi * wo + t) * f + fi];
                                for ci in 0..c {
                                    for ki in 0..k {
                                        dst[(fi * c + ci) * k + ki] += gv * x[(bi * w + t + ki) * c + ci];
                                    }
                                }
                            }
                        }
                    }
                }
                if wants(input) {
                    let dst = slot(grads, input, b * w * c);
                    for bi in 0..b {
                        for t in 0..wo {
                            for fi in 0..f {
                                let gv = g[(bi * wo + t) * f + fi];
                                for ci in 0..c {
                                    for ki in 0..k {
                                        dst[(bi * w + t + ki) * c + ci] += gv * kern[(fi * c + ci) * k + ki];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
