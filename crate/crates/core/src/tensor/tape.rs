use std::cell::RefCell;
use std::collections::BTreeMap;

use super::dense::Tensor;
use super::param::{ParamId, Parameter};
use crate::error::{Error, Result};

/// Recorded operation. Inputs are node indices that always precede the node
/// holding the op, so a reverse scan over the node list is a valid
/// topological order for the backward pass.
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Sigmoid(usize),
    Neg(usize),
    Scale(usize, f64),
    Abs(usize),
    Clamp(usize, f64, f64),
    AddRow(usize, usize),
    AddCol(usize, usize),
    Transpose(usize),
    SliceCols(usize, usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation tape.
///
/// A tape is rebuilt for every forward pass. Parameters registered through
/// [`Tape::param`] are cached by id, so using one parameter twice in a graph
/// yields a single leaf whose gradient accumulates across both uses.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<BTreeMap<ParamId, usize>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
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

    /// A value that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that receives gradient (inputs under test, samples, ...).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a trainable parameter; repeated calls return the same node.
    pub fn param(&self, p: &Parameter) -> Var<'_> {
        if let Some(&id) = self.params.borrow().get(&p.id()) {
            return Var { tape: self, id };
        }
        let v = self.push(p.value.clone(), Op::Leaf, true);
        self.params.borrow_mut().insert(p.id(), v.id);
        v
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// The tape is left untouched, so calling this twice returns identical
    /// gradients.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.borrow().clone(),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) -> Result<()> {
    if !nodes[id].requires_grad {
        return Ok(());
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
    let val = |i: usize| &nodes[i].value;
    match node.op {
        Op::Leaf => Ok(()),
        Op::Add(a, b) => {
            accumulate(grads, nodes, a, g.clone())?;
            accumulate(grads, nodes, b, g.clone())
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, a, g.clone())?;
            accumulate(grads, nodes, b, g.scale(-1.0))
        }
        Op::Mul(a, b) => {
            accumulate(grads, nodes, a, g.mul(val(b))?)?;
            accumulate(grads, nodes, b, g.mul(val(a))?)
        }
        Op::MatMul(a, b) => {
            if nodes[a].requires_grad {
                accumulate(grads, nodes, a, g.matmul(&val(b).transpose()?)?)?;
            }
            if nodes[b].requires_grad {
                accumulate(grads, nodes, b, val(a).transpose()?.matmul(g)?)?;
            }
            Ok(())
        }
        Op::Sum(a) => accumulate(grads, nodes, a, Tensor::full(val(a).shape(), g.item())),
        Op::Mean(a) => {
            let n = val(a).numel() as f64;
            accumulate(grads, nodes, a, Tensor::full(val(a).shape(), g.item() / n))
        }
        Op::SumRows(a) => {
            let x = val(a);
            let c = x.cols();
            let mut out = Tensor::zeros(x.shape());
            for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
                row.fill(g.data()[i]);
            }
            accumulate(grads, nodes, a, out)
        }
        Op::Exp(a) => accumulate(grads, nodes, a, g.mul(&node.value)?),
        Op::Log(a) => accumulate(grads, nodes, a, g.zip_map(val(a), "log", |g, x| g / x)?),
        Op::Tanh(a) => accumulate(grads, nodes, a, g.zip_map(&node.value, "tanh", |g, y| g * (1.0 - y * y))?),
        Op::Relu(a) => accumulate(
            grads,
            nodes,
            a,
            g.zip_map(val(a), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?,
        ),
        Op::Softplus(a) => accumulate(grads, nodes, a, g.zip_map(val(a), "softplus", |g, x| g * sigmoid(x))?),
        Op::Sigmoid(a) => accumulate(
            grads,
            nodes,
            a,
            g.zip_map(&node.value, "sigmoid", |g, y| g * y * (1.0 - y))?,
        ),
        Op::Neg(a) => accumulate(grads, nodes, a, g.scale(-1.0)),
        Op::Scale(a, s) => accumulate(grads, nodes, a, g.scale(s)),
        Op::Abs(a) => accumulate(
            grads,
            nodes,
            a,
            g.zip_map(val(a), "abs", |g, x| {
                if x > 0.0 {
                    g
                } else if x < 0.0 {
                    -g
                } else {
                    0.0
                }
            })?,
        ),
        Op::Clamp(a, lo, hi) => accumulate(
            grads,
            nodes,
            a,
            g.zip_map(val(a), "clamp", |g, x| if (lo..=hi).contains(&x) { g } else { 0.0 })?,
        ),
        Op::AddRow(a, row) => {
            accumulate(grads, nodes, a, g.clone())?;
            let r = g.sum_cols().reshape(val(row).shape().to_vec())?;
            accumulate(grads, nodes, row, r)
        }
        Op::AddCol(a, col) => {
            accumulate(grads, nodes, a, g.clone())?;
            accumulate(grads, nodes, col, g.sum_rows())
        }
        Op::Transpose(a) => accumulate(grads, nodes, a, g.transpose()?),
        Op::SliceCols(a, start, end) => {
            let x = val(a);
            let (c, w) = (x.cols(), end - start);
            let mut out = Tensor::zeros(x.shape());
            for i in 0..x.rows() {
                out.data_mut()[i * c + start..i * c + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
            }
            accumulate(grads, nodes, a, out)
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Gradients produced by one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, usize>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn for_param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|&i| self.grads.get(i)).and_then(|g| g.as_ref())
    }

    /// Ids of every parameter that was registered on the tape.
    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars belong to different tapes");
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (f(&n.value)?, n.requires_grad)
        };
        Ok(self.tape.push(value, op, rg))
    }

    fn binary(&self, other: Var<'t>, op: Op, f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            (f(&a.value, &b.value)?, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(value, op, rg))
    }

    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        self.unary(op, |x| Ok(x.map(f))).expect("elementwise map cannot fail")
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a.add(b))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a.sub(b))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a.mul(b))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| a.matmul(b))
    }

    /// Adds a `(1, d)` (or `(d)`) row to every row of a `(n, d)` matrix.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        self.binary(row, Op::AddRow(self.id, row.id), |a, r| {
            let ok = a.rank() == 2
                && r.cols() == a.cols()
                && (r.rank() == 1 || (r.rank() == 2 && r.shape()[0] == 1));
            if !ok {
                return Err(Error::shape("add_row", a.shape(), r.shape()));
            }
            let c = a.cols();
            let mut out = a.clone();
            for row in out.data_mut().chunks_mut(c) {
                for (o, v) in row.iter_mut().zip(r.data()) {
                    *o += v;
                }
            }
            Ok(out)
        })
    }

    /// Adds a `(n, 1)` column to every column of a `(n, d)` matrix.
    pub fn add_col(&self, col: Var<'t>) -> Result<Var<'t>> {
        self.binary(col, Op::AddCol(self.id, col.id), |a, k| {
            if a.rank() != 2 || k.shape() != [a.rows(), 1] {
                return Err(Error::shape("add_col", a.shape(), k.shape()));
            }
            let c = a.cols();
            let mut out = a.clone();
            for (row, v) in out.data_mut().chunks_mut(c).zip(k.data()) {
                for o in row {
                    *o += v;
                }
            }
            Ok(out)
        })
    }

    pub fn sum(&self) -> Var<'t> {
        self.map_scalar(Op::Sum(self.id), Tensor::sum)
    }

    pub fn mean(&self) -> Var<'t> {
        self.map_scalar(Op::Mean(self.id), Tensor::mean)
    }

    fn map_scalar(&self, op: Op, f: impl Fn(&Tensor) -> f64) -> Var<'t> {
        self.unary(op, |x| Ok(Tensor::scalar(f(x)))).expect("reduction cannot fail")
    }

    /// Row sums, `(n, d) -> (n, 1)`.
    pub fn sum_rows(&self) -> Result<Var<'t>> {
        self.unary(Op::SumRows(self.id), |x| {
            if x.rank() != 2 {
                return Err(Error::shape("sum_rows", x.shape(), &[]));
            }
            Ok(x.sum_rows())
        })
    }

    pub fn exp(&self) -> Var<'t> {
        self.map(Op::Exp(self.id), f64::exp)
    }

    /// Natural log; errors on any non-positive entry.
    pub fn log(&self) -> Result<Var<'t>> {
        self.unary(Op::Log(self.id), |x| {
            if let Some(bad) = x.data().iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
            Ok(x.map(f64::ln))
        })
    }

    pub fn tanh(&self) -> Var<'t> {
        self.map(Op::Tanh(self.id), f64::tanh)
    }

    pub fn relu(&self) -> Var<'t> {
        self.map(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn softplus(&self) -> Var<'t> {
        self.map(Op::Softplus(self.id), softplus)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.map(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn neg(&self) -> Var<'t> {
        self.map(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.map(Op::Scale(self.id, s), |x| x * s)
    }

    pub fn abs(&self) -> Var<'t> {
        self.map(Op::Abs(self.id), f64::abs)
    }

    /// Clamps into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.map(Op::Clamp(self.id, lo, hi), move |x| x.clamp(lo, hi))
    }

    pub fn square(&self) -> Var<'t> {
        self.mul(*self).expect("same shape")
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        self.unary(Op::Transpose(self.id), Tensor::transpose)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t>> {
        self.unary(Op::SliceCols(self.id, start, end), |x| {
            if x.rank() != 2 || start >= end || end > x.cols() {
                return Err(Error::shape("slice_cols", x.shape(), &[start, end]));
            }
            let c = x.cols();
            let mut data = Vec::with_capacity(x.rows() * (end - start));
            for i in 0..x.rows() {
                data.extend_from_slice(&x.data()[i * c + start..i * c + end]);
            }
            Tensor::new(vec![x.rows(), end - start], data)
        })
    }

    /// Row-wise log-softmax of a `(n, k)` logit matrix.
    pub fn log_softmax_rows(&self) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() != 2 {
            return Err(Error::shape("log_softmax_rows", x.shape(), &[]));
        }
        // Shifting by the (constant) row max leaves log-softmax unchanged.
        let shift: Vec<f64> = (0..x.rows())
            .map(|i| -x.row_slice(i).iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
            .collect();
        let shift = self.tape.constant(Tensor::new(vec![x.rows(), 1], shift)?);
        let shifted = self.add_col(shift)?;
        let lse = shifted.exp().sum_rows()?.log()?;
        shifted.add_col(lse.neg())
    }
}
