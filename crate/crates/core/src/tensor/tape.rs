//! Wengert-list tape for reverse-mode differentiation.
//!
//! Nodes are appended in execution order, so the list is already
//! topologically sorted and backward is a single reverse sweep.

use std::cell::{Ref, RefCell};

use super::ops::{self, Mask};
use super::{dim_err, sigmoid, silu, softplus, Result, Tensor, TensorError};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Transpose(usize),
    Reshape(usize),
    SumAll(usize),
    SumLast(usize),
    MeanLast(usize),
    Exp(usize),
    Log(usize),
    Silu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Rsqrt(usize),
    Softmax(usize),
    LogSoftmax(usize),
    GatherRows(usize, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations for one forward pass.
///
/// A tape is single-threaded; independent samples evaluate on independent
/// tapes.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros if `v` did not
    /// influence the root.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }

    pub fn take(&mut self, v: Var<'_>) -> Tensor {
        match self.grads[v.id].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input (parameter or probe point).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Const, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let rg = self.needs(inputs);
        self.push(value, op, rg)
    }

    /// Reverse sweep from a one-element root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(root.tape, self) {
            return Err(TensorError::Contract("root belongs to another tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.id].value.shape().to_vec();
        if nodes[root.id].value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar root, got shape {root_shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::new(root_shape, vec![1.0]).expect("scalar"));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Const) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| &nodes[i].value;
            let mut acc = |i: usize, contribution: Tensor| {
                if !nodes[i].requires_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(existing) => existing
                        .axpy(1.0, &contribution)
                        .expect("adjoint shapes match values"),
                    slot @ None => *slot = Some(contribution),
                }
            };
            match &node.op {
                Op::Leaf | Op::Const => unreachable!(),
                Op::Add(a, b) => {
                    acc(*a, ops::reduce_to_shape(&g, val(*a).shape()));
                    acc(*b, ops::reduce_to_shape(&g, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    acc(*a, ops::reduce_to_shape(&g, val(*a).shape()));
                    acc(*b, ops::reduce_to_shape(&g, val(*b).shape()).scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(val(*b))?;
                    let gb = g.mul(val(*a))?;
                    acc(*a, ops::reduce_to_shape(&ga, val(*a).shape()));
                    acc(*b, ops::reduce_to_shape(&gb, val(*b).shape()));
                }
                Op::Neg(a) => acc(*a, g.scale(-1.0)),
                Op::Scale(a, c) => acc(*a, g.scale(*c)),
                Op::AddScalar(a) => acc(*a, g),
                Op::MatMul(a, b) => {
                    acc(*a, g.matmul_nt(val(*b))?);
                    acc(*b, val(*a).matmul_tn(&g)?);
                }
                Op::MatMulNt(a, b) => {
                    acc(*a, g.matmul(val(*b))?);
                    acc(*b, g.matmul_tn(val(*a))?);
                }
                Op::Transpose(a) => acc(*a, g.transpose()?),
                Op::Reshape(a) => acc(*a, g.reshape(val(*a).shape())?),
                Op::SumAll(a) => {
                    let x = val(*a);
                    acc(*a, Tensor::full(x.shape(), g.item()));
                }
                Op::SumLast(a) | Op::MeanLast(a) => {
                    let x = val(*a);
                    let c = x.cols();
                    let f = if matches!(node.op, Op::MeanLast(_)) { 1.0 / c as f64 } else { 1.0 };
                    let mut out = Vec::with_capacity(x.numel());
                    for &gr in g.data() {
                        out.extend(std::iter::repeat(f * gr).take(c));
                    }
                    acc(*a, Tensor::new(x.shape().to_vec(), out)?);
                }
                Op::Exp(a) => acc(*a, zip(&g, &node.value, |g, y| g * y)),
                Op::Log(a) => acc(*a, zip(&g, val(*a), |g, x| g / x)),
                Op::Silu(a) => acc(
                    *a,
                    zip(&g, val(*a), |g, x| {
                        let s = sigmoid(x);
                        g * (s + x * s * (1.0 - s))
                    }),
                ),
                Op::Sigmoid(a) => acc(*a, zip(&g, &node.value, |g, y| g * y * (1.0 - y))),
                Op::Softplus(a) => acc(*a, zip(&g, val(*a), |g, x| g * sigmoid(x))),
                Op::Rsqrt(a) => acc(*a, zip(&g, &node.value, |g, y| -0.5 * g * y * y * y)),
                Op::Softmax(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut out = Vec::with_capacity(y.numel());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), &g.data()[r * c..(r + 1) * c]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        out.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
                    }
                    acc(*a, Tensor::new(y.shape().to_vec(), out)?);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut out = Vec::with_capacity(y.numel());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), &g.data()[r * c..(r + 1) * c]);
                        let total: f64 = gr.iter().sum();
                        out.extend(yr.iter().zip(gr).map(|(y, g)| g - y.exp() * total));
                    }
                    acc(*a, Tensor::new(y.shape().to_vec(), out)?);
                }
                Op::GatherRows(t, idx) => {
                    let table = val(*t);
                    let c = table.cols();
                    let mut out = Tensor::zeros_like(table);
                    let od = out.data_mut();
                    for (r, &ix) in idx.iter().enumerate() {
                        for (o, gv) in od[ix * c..(ix + 1) * c].iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                            *o += gv;
                        }
                    }
                    acc(*t, out);
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Borrow of the recorded value; must be dropped before recording more ops.
    pub fn value_ref(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    fn unary(self, op: impl FnOnce(usize) -> Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'t> {
        let v = f(&self.value_ref());
        self.tape.record(v, op(self.id), &[self.id])
    }

    fn try_unary(self, op: impl FnOnce(usize) -> Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let v = f(&self.value_ref())?;
        Ok(self.tape.record(v, op(self.id), &[self.id]))
    }

    fn binary(
        self,
        other: Var<'t>,
        op: impl FnOnce(usize, usize) -> Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'t>> {
        if !std::ptr::eq(self.tape, other.tape) {
            return Err(TensorError::Contract("operands recorded on different tapes".into()));
        }
        let v = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        Ok(self.tape.record(v, op(self.id, other.id), &[self.id, other.id]))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add, |a, b| a.add(b))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub, |a, b| a.sub(b))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul, |a, b| a.mul(b))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul, ops::matmul)
    }

    /// `self · otherᵀ`; the usual `x Wᵀ` projection with row-major weights.
    pub fn matmul_nt(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMulNt, ops::matmul_nt)
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, |x| x.scale(-1.0))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(|a| Op::Scale(a, c), |x| x.scale(c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar, |x| x.map(|v| v + c))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.try_unary(Op::Transpose, ops::transpose)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        self.try_unary(Op::Reshape, |x| x.reshape(shape))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(self) -> Var<'t> {
        self.unary(Op::SumAll, |x| Tensor::scalar(x.sum()))
    }

    pub fn sum_lastdim(self) -> Var<'t> {
        self.unary(Op::SumLast, ops::sum_lastdim)
    }

    pub fn mean_lastdim(self) -> Var<'t> {
        self.unary(Op::MeanLast, |x| ops::sum_lastdim(x).scale(1.0 / x.cols() as f64))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp, |x| x.map(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log, |x| x.map(f64::ln))
    }

    pub fn silu(self) -> Var<'t> {
        self.unary(Op::Silu, |x| x.map(silu))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid, |x| x.map(sigmoid))
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus, |x| x.map(softplus))
    }

    pub fn rsqrt(self) -> Var<'t> {
        self.unary(Op::Rsqrt, |x| x.map(|v| 1.0 / v.sqrt()))
    }

    pub fn softmax_lastdim(self, mask: Option<&Mask>) -> Result<Var<'t>> {
        self.try_unary(Op::Softmax, |x| ops::softmax_lastdim(x, mask))
    }

    pub fn log_softmax_lastdim(self) -> Var<'t> {
        self.unary(Op::LogSoftmax, ops::log_softmax_lastdim)
    }

    /// Row lookup `table[indices[r]]`, e.g. token embeddings.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t>> {
        let (rows, cols) = {
            let t = self.value_ref();
            if t.rank() != 2 {
                return Err(dim_err("gather_rows", t.shape(), &[indices.len()]));
            }
            (t.shape()[0], t.shape()[1])
        };
        if indices.is_empty() {
            return Err(TensorError::Contract("gather of no rows".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Domain {
                op: "gather_rows",
                reason: format!("index {bad} out of {rows} rows"),
            });
        }
        let idx = indices.to_vec();
        self.try_unary(
            |a| Op::GatherRows(a, idx),
            |t| {
                let mut data = Vec::with_capacity(indices.len() * cols);
                for &i in indices {
                    data.extend_from_slice(t.row(i));
                }
                Tensor::new(vec![indices.len(), cols], data)
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn half_squared_norm_gradient_is_x() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.5, -1.5, 2.0]));
        let root = x.mul(x).unwrap().sum().scale(0.5);
        let g = tape.backward(root).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.5, -1.5, 2.0]);
    }

    #[test]
    fn non_scalar_root_is_a_contract_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x.exp()), Err(TensorError::Contract(_))));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.mul(x).unwrap().add(x).unwrap();
        assert_eq!(tape.backward(y).unwrap().wrt(x).item(), 7.0);
    }

    #[test]
    fn constants_get_no_gradient_and_unused_leaves_get_zeros() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![2.0]));
        let x = tape.leaf(Tensor::vector(vec![5.0]));
        let unused = tape.leaf(Tensor::zeros(&[2, 2]));
        let g = tape.backward(x.mul(c).unwrap().sum()).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0]);
        assert_eq!(g.wrt(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn gather_scatters_back() {
        let tape = Tape::new();
        let table = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let picked = table.gather_rows(&[1, 1, 0]).unwrap();
        assert_eq!(picked.value().data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let g = tape.backward(picked.sum()).unwrap();
        assert_eq!(g.wrt(table).data(), &[1.0, 1.0, 2.0, 2.0]);
        assert!(table.gather_rows(&[2]).is_err());
    }
}
