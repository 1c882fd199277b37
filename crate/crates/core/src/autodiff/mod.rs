//! Dense-tensor reverse-mode automatic differentiation.
//!
//! Values are computed eagerly; every operation records a node on a [`Graph`]
//! so that [`Graph::backward`] can replay the tape in reverse. Tensors are
//! row-major `f64` buffers. Broadcasting is restricted to explicit
//! leading-axis expansion ([`Graph::broadcast_lead`]); everything else
//! requires matching shapes, so shape bugs surface at the op that caused
//! them.

mod check;
mod ops;

pub use check::{grad_check, relative_gap};

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid axis {axis} for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    DataLength {
        op: &'static str,
        len: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: index {index} out of bounds for axis of size {size}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("non-finite value at coordinate {index} in {context}")]
    NonFinite { context: String, index: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{0}")]
    Invalid(String),
}

/// Dense row-major tensor participating in a [`Graph`].
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    /// Populated by [`Graph::backward`]; always the same length as `data`.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// The primitive set, for generic dispatch via [`Graph::apply`].
///
/// Each variant corresponds to a typed method on [`Graph`]; the enum exists
/// so tests can enumerate the full set (e.g. running a finite-difference
/// check over every primitive).
#[derive(Debug, Clone)]
pub enum PrimitiveOp {
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    ScalarMul(f64),
    ScalarAdd(f64),
    Square,
    Exp,
    Sigmoid,
    Tanh,
    Gelu,
    Relu,
    Transpose,
    Softmax { axis: usize },
    LayerNorm { eps: f64 },
    BroadcastLead { copies: usize },
    Gather { indices: Vec<usize> },
    ReduceSum { axis: Option<usize> },
    ReduceMean { axis: Option<usize> },
    ScaleRows,
    SumRowGroups { group: usize },
    SliceCols { start: usize, end: usize },
    Reshape { shape: Vec<usize> },
}

#[derive(Debug, Clone)]
enum Recorded {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Div { a: TensorId, b: TensorId },
    ScalarMul { x: TensorId, c: f64 },
    ScalarAdd { x: TensorId },
    Square { x: TensorId },
    Exp { x: TensorId },
    Sigmoid { x: TensorId },
    Tanh { x: TensorId },
    Gelu { x: TensorId, tanh_inner: Vec<f64> },
    Relu { x: TensorId },
    Transpose { x: TensorId },
    Softmax { x: TensorId, axis: usize },
    LayerNorm { x: TensorId, gamma: TensorId, beta: TensorId, eps: f64 },
    BroadcastLead { x: TensorId, copies: usize },
    Gather { x: TensorId, indices: Vec<usize> },
    ReduceSum { x: TensorId, axis: Option<usize> },
    ReduceMean { x: TensorId, axis: Option<usize> },
    ScaleRows { x: TensorId, s: TensorId },
    SumRowGroups { x: TensorId, group: usize },
    SliceCols { x: TensorId, start: usize, end: usize },
    Reshape { x: TensorId },
}

struct Node {
    op: Recorded,
    value: Tensor,
}

/// Topologically ordered record of primitive applications.
///
/// Acyclic by construction: an op's inputs always precede it on the tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf tensor. `requires_grad` marks it as a differentiation
    /// target for [`Graph::backward`].
    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::DataLength {
                op: "leaf",
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(self.push(Recorded::Leaf, shape.to_vec(), data, requires_grad))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<TensorId> {
        self.leaf(data, shape, false)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].value.data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad.as_deref()
    }

    fn push(&mut self, op: Recorded, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value: Tensor {
                shape,
                data,
                requires_grad,
                grad: None,
            },
        });
        id
    }

    fn any_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].value.requires_grad)
    }

    /// Generic dispatch over the primitive set.
    pub fn apply(&mut self, op: &PrimitiveOp, inputs: &[TensorId]) -> Result<TensorId> {
        let arity_err = |want: usize| {
            TensorError::Invalid(format!(
                "apply: expected {want} inputs, got {}",
                inputs.len()
            ))
        };
        macro_rules! with_arity {
            ($n:expr, $body:expr) => {{
                if inputs.len() != $n {
                    return Err(arity_err($n));
                }
                $body
            }};
        }
        match op {
            PrimitiveOp::MatMul => with_arity!(2, self.matmul(inputs[0], inputs[1])),
            PrimitiveOp::Add => with_arity!(2, self.add(inputs[0], inputs[1])),
            PrimitiveOp::Sub => with_arity!(2, self.sub(inputs[0], inputs[1])),
            PrimitiveOp::Mul => with_arity!(2, self.mul(inputs[0], inputs[1])),
            PrimitiveOp::Div => with_arity!(2, self.div(inputs[0], inputs[1])),
            PrimitiveOp::ScalarMul(c) => with_arity!(1, self.scalar_mul(inputs[0], *c)),
            PrimitiveOp::ScalarAdd(c) => with_arity!(1, self.scalar_add(inputs[0], *c)),
            PrimitiveOp::Square => with_arity!(1, self.square(inputs[0])),
            PrimitiveOp::Exp => with_arity!(1, self.exp(inputs[0])),
            PrimitiveOp::Sigmoid => with_arity!(1, self.sigmoid(inputs[0])),
            PrimitiveOp::Tanh => with_arity!(1, self.tanh(inputs[0])),
            PrimitiveOp::Gelu => with_arity!(1, self.gelu(inputs[0])),
            PrimitiveOp::Relu => with_arity!(1, self.relu(inputs[0])),
            PrimitiveOp::Transpose => with_arity!(1, self.transpose(inputs[0])),
            PrimitiveOp::Softmax { axis } => with_arity!(1, self.softmax(inputs[0], *axis)),
            PrimitiveOp::LayerNorm { eps } => {
                with_arity!(3, self.layer_norm(inputs[0], inputs[1], inputs[2], *eps))
            }
            PrimitiveOp::BroadcastLead { copies } => {
                with_arity!(1, self.broadcast_lead(inputs[0], *copies))
            }
            PrimitiveOp::Gather { indices } => with_arity!(1, self.gather(inputs[0], indices)),
            PrimitiveOp::ReduceSum { axis } => with_arity!(1, self.reduce_sum(inputs[0], *axis)),
            PrimitiveOp::ReduceMean { axis } => with_arity!(1, self.reduce_mean(inputs[0], *axis)),
            PrimitiveOp::ScaleRows => with_arity!(2, self.scale_rows(inputs[0], inputs[1])),
            PrimitiveOp::SumRowGroups { group } => {
                with_arity!(1, self.sum_row_groups(inputs[0], *group))
            }
            PrimitiveOp::SliceCols { start, end } => {
                with_arity!(1, self.slice_cols(inputs[0], *start, *end))
            }
            PrimitiveOp::Reshape { shape } => with_arity!(1, self.reshape(inputs[0], shape)),
        }
    }

    /// `a [m,k] @ b [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = ops::matmul_nn(self.data(a), self.data(b), m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Recorded::MatMul { a, b }, vec![m, n], data, rg))
    }

    fn elementwise_pair(
        &mut self,
        op_name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        rec: impl FnOnce(TensorId, TensorId) -> Recorded,
    ) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let shape = sa.to_vec();
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(rec(a, b), shape, data, rg))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise_pair("add", a, b, |x, y| x + y, |a, b| Recorded::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise_pair("sub", a, b, |x, y| x - y, |a, b| Recorded::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise_pair("mul", a, b, |x, y| x * y, |a, b| Recorded::Mul { a, b })
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise_pair("div", a, b, |x, y| x / y, |a, b| Recorded::Div { a, b })
    }

    fn elementwise_unary(
        &mut self,
        x: TensorId,
        f: impl Fn(f64) -> f64,
        rec: impl FnOnce(TensorId) -> Recorded,
    ) -> TensorId {
        let shape = self.shape(x).to_vec();
        let data: Vec<f64> = self.data(x).iter().map(|&v| f(v)).collect();
        let rg = self.any_grad(&[x]);
        self.push(rec(x), shape, data, rg)
    }

    pub fn scalar_mul(&mut self, x: TensorId, c: f64) -> Result<TensorId> {
        Ok(self.elementwise_unary(x, |v| v * c, |x| Recorded::ScalarMul { x, c }))
    }

    pub fn scalar_add(&mut self, x: TensorId, c: f64) -> Result<TensorId> {
        Ok(self.elementwise_unary(x, |v| v + c, |x| Recorded::ScalarAdd { x }))
    }

    pub fn square(&mut self, x: TensorId) -> Result<TensorId> {
        Ok(self.elementwise_unary(x, |v| v * v, |x| Recorded::Square { x }))
    }

    pub fn exp(&mut self, x: TensorId) -> Result<TensorId> {
        Ok(self.elementwise_unary(x, f64::exp, |x| Recorded::Exp { x }))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        Ok(self.elementwise_unary(x, ops::sigmoid, |x| Recorded::Sigmoid { x }))
    }

    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId> {
        Ok(self.elementwise_unary(x, f64::tanh, |x| Recorded::Tanh { x }))
    }

    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId> {
        // Saving the inner tanh keeps the backward pass free of
        // transcendental calls.
        let shape = self.shape(x).to_vec();
        let src = self.data(x);
        let mut tanh_inner = Vec::with_capacity(src.len());
        let mut data = Vec::with_capacity(src.len());
        for &v in src {
            let t = ops::gelu_inner_tanh(v);
            tanh_inner.push(t);
            data.push(0.5 * v * (1.0 + t));
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Recorded::Gelu { x, tanh_inner }, shape, data, rg))
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        Ok(self.elementwise_unary(x, |v| v.max(0.0), |x| Recorded::Relu { x }))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch { op: "transpose", lhs: s, rhs: vec![] });
        }
        let (r, c) = (s[0], s[1]);
        let data = ops::transpose(self.data(x), r, c);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Recorded::Transpose { x }, vec![c, r], data, rg))
    }

    /// Softmax along `axis`; the reduced axis sums to one.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis { op: "softmax", axis, shape });
        }
        let data = ops::softmax(self.data(x), &shape, axis);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Recorded::Softmax { x, axis }, shape, data, rg))
    }

    /// Layer normalization over the last axis with learned `gamma`/`beta`.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or(TensorError::InvalidAxis {
            op: "layer_norm",
            axis: 0,
            shape: vec![],
        })?;
        for (name, t) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(t) != [d] {
                let _ = name;
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: shape,
                    rhs: self.shape(t).to_vec(),
                });
            }
        }
        let data = ops::layer_norm(self.data(x), self.data(gamma), self.data(beta), d, eps);
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(Recorded::LayerNorm { x, gamma, beta, eps }, shape, data, rg))
    }

    /// Leading-axis expansion: `[d...] -> [copies, d...]` by repetition.
    pub fn broadcast_lead(&mut self, x: TensorId, copies: usize) -> Result<TensorId> {
        if copies == 0 {
            return Err(TensorError::Invalid("broadcast_lead: zero copies".into()));
        }
        let mut shape = vec![copies];
        shape.extend_from_slice(self.shape(x));
        let src = self.data(x);
        let mut data = Vec::with_capacity(src.len() * copies);
        for _ in 0..copies {
            data.extend_from_slice(src);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Recorded::BroadcastLead { x, copies }, shape, data, rg))
    }

    /// Gather rows along axis 0: `out[i, ...] = x[indices[i], ...]`.
    pub fn gather(&mut self, x: TensorId, indices: &[usize]) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.is_empty() {
            return Err(TensorError::InvalidAxis { op: "gather", axis: 0, shape: s });
        }
        let rows = s[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfBounds { op: "gather", index: bad, size: rows });
        }
        let stride: usize = s[1..].iter().product();
        let src = self.data(x);
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(&src[i * stride..(i + 1) * stride]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&s[1..]);
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Recorded::Gather { x, indices: indices.to_vec() },
            shape,
            data,
            rg,
        ))
    }

    /// Sum over `axis`, or over everything (`None` gives shape `[1]`).
    pub fn reduce_sum(&mut self, x: TensorId, axis: Option<usize>) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        match axis {
            None => {
                let s: f64 = self.data(x).iter().sum();
                let rg = self.any_grad(&[x]);
                Ok(self.push(Recorded::ReduceSum { x, axis: None }, vec![1], vec![s], rg))
            }
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(TensorError::InvalidAxis { op: "reduce_sum", axis: ax, shape });
                }
                let (data, out_shape) = ops::reduce_axis_sum(self.data(x), &shape, ax);
                let rg = self.any_grad(&[x]);
                Ok(self.push(Recorded::ReduceSum { x, axis: Some(ax) }, out_shape, data, rg))
            }
        }
    }

    /// Mean over `axis`, or over everything (`None` gives shape `[1]`).
    pub fn reduce_mean(&mut self, x: TensorId, axis: Option<usize>) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        match axis {
            None => {
                let n = self.data(x).len() as f64;
                let s: f64 = self.data(x).iter().sum();
                let rg = self.any_grad(&[x]);
                Ok(self.push(Recorded::ReduceMean { x, axis: None }, vec![1], vec![s / n], rg))
            }
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(TensorError::InvalidAxis { op: "reduce_mean", axis: ax, shape });
                }
                let denom = shape[ax] as f64;
                let (mut data, out_shape) = ops::reduce_axis_sum(self.data(x), &shape, ax);
                for v in &mut data {
                    *v /= denom;
                }
                let rg = self.any_grad(&[x]);
                Ok(self.push(Recorded::ReduceMean { x, axis: Some(ax) }, out_shape, data, rg))
            }
        }
    }

    /// Scale each row of `x [r,c]` by the matching entry of `s [r]`.
    pub fn scale_rows(&mut self, x: TensorId, s: TensorId) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        let ss = self.shape(s).to_vec();
        if sx.len() != 2 || ss != [sx[0]] {
            return Err(TensorError::ShapeMismatch { op: "scale_rows", lhs: sx, rhs: ss });
        }
        let (r, c) = (sx[0], sx[1]);
        let xs = self.data(x);
        let sv = self.data(s);
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let f = sv[i];
            data.extend(xs[i * c..(i + 1) * c].iter().map(|&v| v * f));
        }
        let rg = self.any_grad(&[x, s]);
        Ok(self.push(Recorded::ScaleRows { x, s }, sx, data, rg))
    }

    /// Collapse consecutive groups of `group` rows by summation:
    /// `[g*q, c] -> [q, c]`.
    pub fn sum_row_groups(&mut self, x: TensorId, group: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || group == 0 || s[0] % group != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "sum_row_groups",
                lhs: s,
                rhs: vec![group],
            });
        }
        let (rows, c) = (s[0], s[1]);
        let q = rows / group;
        let src = self.data(x);
        let mut data = vec![0.0; q * c];
        for i in 0..rows {
            let out = &mut data[(i / group) * c..(i / group + 1) * c];
            for (o, &v) in out.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Recorded::SumRowGroups { x, group }, vec![q, c], data, rg))
    }

    /// Column slice of a 2-D tensor: keeps columns `start..end`.
    pub fn slice_cols(&mut self, x: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start >= end || end > s[1] {
            return Err(TensorError::Invalid(format!(
                "slice_cols: range {start}..{end} invalid for shape {s:?}"
            )));
        }
        let (r, c) = (s[0], s[1]);
        let w = end - start;
        let src = self.data(x);
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Recorded::SliceCols { x, start, end }, vec![r, w], data, rg))
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(TensorError::DataLength {
                op: "reshape",
                len: self.value(x).numel(),
                shape: shape.to_vec(),
            });
        }
        let data = self.data(x).to_vec();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Recorded::Reshape { x }, shape.to_vec(), data, rg))
    }

    /// Reverse pass from a scalar `loss`. Populates `grad` on every tensor
    /// that requires one and is an ancestor of the loss; gradients of
    /// fan-out nodes are summed.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let needs = |id: TensorId| self.nodes[id.0].value.requires_grad;
        let numel = |id: TensorId| self.nodes[id.0].value.numel();
        // Lazily allocate the accumulator for `id`, then add into it.
        macro_rules! accum {
            ($id:expr, $f:expr) => {
                if needs($id) {
                    let buf = grads[$id.0].get_or_insert_with(|| vec![0.0; numel($id)]);
                    #[allow(clippy::redundant_closure_call)]
                    ($f)(buf.as_mut_slice());
                }
            };
        }
        match &node.op {
            Recorded::Leaf => {}
            Recorded::MatMul { a, b } => {
                let sa = &self.nodes[a.0].value.shape;
                let (m, k) = (sa[0], sa[1]);
                let n2 = node.value.shape[1];
                accum!(*a, |buf: &mut [f64]| {
                    ops::matmul_nt_acc(g, &self.nodes[b.0].value.data, m, n2, k, buf)
                });
                accum!(*b, |buf: &mut [f64]| {
                    ops::matmul_tn_acc(&self.nodes[a.0].value.data, g, m, k, n2, buf)
                });
            }
            Recorded::Add { a, b } => {
                accum!(*a, |buf: &mut [f64]| ops::axpy(1.0, g, buf));
                accum!(*b, |buf: &mut [f64]| ops::axpy(1.0, g, buf));
            }
            Recorded::Sub { a, b } => {
                accum!(*a, |buf: &mut [f64]| ops::axpy(1.0, g, buf));
                accum!(*b, |buf: &mut [f64]| ops::axpy(-1.0, g, buf));
            }
            Recorded::Mul { a, b } => {
                accum!(*a, |buf: &mut [f64]| {
                    ops::mul_acc(g, &self.nodes[b.0].value.data, buf)
                });
                accum!(*b, |buf: &mut [f64]| {
                    ops::mul_acc(g, &self.nodes[a.0].value.data, buf)
                });
            }
            Recorded::Div { a, b } => {
                let av = &self.nodes[a.0].value.data;
                let bv = &self.nodes[b.0].value.data;
                accum!(*a, |buf: &mut [f64]| {
                    for ((o, &gv), &y) in buf.iter_mut().zip(g).zip(bv) {
                        *o += gv / y;
                    }
                });
                accum!(*b, |buf: &mut [f64]| {
                    for (((o, &gv), &x), &y) in buf.iter_mut().zip(g).zip(av).zip(bv) {
                        *o -= gv * x / (y * y);
                    }
                });
            }
            Recorded::ScalarMul { x, c } => {
                accum!(*x, |buf: &mut [f64]| ops::axpy(*c, g, buf));
            }
            Recorded::ScalarAdd { x } => {
                accum!(*x, |buf: &mut [f64]| ops::axpy(1.0, g, buf));
            }
            Recorded::Square { x } => {
                let xv = &self.nodes[x.0].value.data;
                accum!(*x, |buf: &mut [f64]| {
                    for ((o, &gv), &v) in buf.iter_mut().zip(g).zip(xv) {
                        *o += 2.0 * v * gv;
                    }
                });
            }
            Recorded::Exp { x } => {
                let out = &node.value.data;
                accum!(*x, |buf: &mut [f64]| ops::mul_acc(g, out, buf));
            }
            Recorded::Sigmoid { x } => {
                let out = &node.value.data;
                accum!(*x, |buf: &mut [f64]| {
                    for ((o, &gv), &s) in buf.iter_mut().zip(g).zip(out) {
                        *o += gv * s * (1.0 - s);
                    }
                });
            }
            Recorded::Tanh { x } => {
                let out = &node.value.data;
                accum!(*x, |buf: &mut [f64]| {
                    for ((o, &gv), &t) in buf.iter_mut().zip(g).zip(out) {
                        *o += gv * (1.0 - t * t);
                    }
                });
            }
            Recorded::Gelu { x, tanh_inner } => {
                let xv = &self.nodes[x.0].value.data;
                accum!(*x, |buf: &mut [f64]| {
                    for (((o, &gv), &v), &t) in buf.iter_mut().zip(g).zip(xv).zip(tanh_inner) {
                        *o += gv * ops::gelu_grad_from_tanh(v, t);
                    }
                });
            }
            Recorded::Relu { x } => {
                let xv = &self.nodes[x.0].value.data;
                accum!(*x, |buf: &mut [f64]| {
                    for ((o, &gv), &v) in buf.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Recorded::Transpose { x } => {
                let (r, c) = (node.value.shape[0], node.value.shape[1]);
                accum!(*x, |buf: &mut [f64]| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Recorded::Softmax { x, axis } => {
                let out = &node.value.data;
                let shape = &node.value.shape;
                accum!(*x, |buf: &mut [f64]| {
                    ops::softmax_backward_acc(g, out, shape, *axis, buf)
                });
            }
            Recorded::LayerNorm { x, gamma, beta, eps } => {
                let xv = &self.nodes[x.0].value.data;
                let gv = &self.nodes[gamma.0].value.data;
                let d = *node.value.shape.last().unwrap();
                accum!(*x, |buf: &mut [f64]| {
                    ops::layer_norm_backward_x_acc(g, xv, gv, d, *eps, buf)
                });
                accum!(*gamma, |buf: &mut [f64]| {
                    ops::layer_norm_backward_gamma_acc(g, xv, d, *eps, buf)
                });
                accum!(*beta, |buf: &mut [f64]| {
                    let rows = xv.len() / d;
                    for r in 0..rows {
                        for j in 0..d {
                            buf[j] += g[r * d + j];
                        }
                    }
                });
            }
            Recorded::BroadcastLead { x, copies } => {
                let chunk = self.nodes[x.0].value.numel();
                accum!(*x, |buf: &mut [f64]| {
                    for c in 0..*copies {
                        ops::axpy(1.0, &g[c * chunk..(c + 1) * chunk], buf);
                    }
                });
            }
            Recorded::Gather { x, indices } => {
                let stride: usize = self.nodes[x.0].value.shape[1..].iter().product();
                accum!(*x, |buf: &mut [f64]| {
                    for (row, &src) in indices.iter().enumerate() {
                        ops::axpy(
                            1.0,
                            &g[row * stride..(row + 1) * stride],
                            &mut buf[src * stride..(src + 1) * stride],
                        );
                    }
                });
            }
            Recorded::ReduceSum { x, axis } => {
                let shape = self.nodes[x.0].value.shape.clone();
                accum!(*x, |buf: &mut [f64]| match axis {
                    None => {
                        let gv = g[0];
                        for o in buf.iter_mut() {
                            *o += gv;
                        }
                    }
                    Some(ax) => ops::spread_axis_acc(g, &shape, *ax, 1.0, buf),
                });
            }
            Recorded::ReduceMean { x, axis } => {
                let shape = self.nodes[x.0].value.shape.clone();
                accum!(*x, |buf: &mut [f64]| match axis {
                    None => {
                        let gv = g[0] / (self.nodes[x.0].value.numel() as f64);
                        for o in buf.iter_mut() {
                            *o += gv;
                        }
                    }
                    Some(ax) => {
                        let scale = 1.0 / shape[*ax] as f64;
                        ops::spread_axis_acc(g, &shape, *ax, scale, buf)
                    }
                });
            }
            Recorded::ScaleRows { x, s } => {
                let xv = &self.nodes[x.0].value.data;
                let sv = &self.nodes[s.0].value.data;
                let c = node.value.shape[1];
                accum!(*x, |buf: &mut [f64]| {
                    for (i, &f) in sv.iter().enumerate() {
                        ops::axpy(f, &g[i * c..(i + 1) * c], &mut buf[i * c..(i + 1) * c]);
                    }
                });
                accum!(*s, |buf: &mut [f64]| {
                    for (i, o) in buf.iter_mut().enumerate() {
                        let mut dot = 0.0;
                        for j in 0..c {
                            dot += g[i * c + j] * xv[i * c + j];
                        }
                        *o += dot;
                    }
                });
            }
            Recorded::SumRowGroups { x, group } => {
                let c = node.value.shape[1];
                let rows = self.nodes[x.0].value.shape[0];
                accum!(*x, |buf: &mut [f64]| {
                    for i in 0..rows {
                        let src = &g[(i / group) * c..(i / group + 1) * c];
                        ops::axpy(1.0, src, &mut buf[i * c..(i + 1) * c]);
                    }
                });
            }
            Recorded::SliceCols { x, start, end } => {
                let c = self.nodes[x.0].value.shape[1];
                let w = end - start;
                let r = node.value.shape[0];
                accum!(*x, |buf: &mut [f64]| {
                    for i in 0..r {
                        ops::axpy(
                            1.0,
                            &g[i * w..(i + 1) * w],
                            &mut buf[i * c + start..i * c + end],
                        );
                    }
                });
            }
            Recorded::Reshape { x } => {
                accum!(*x, |buf: &mut [f64]| ops::axpy(1.0, g, buf));
            }
        }
    }
}
