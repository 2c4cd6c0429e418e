//! Reverse-mode automatic differentiation over rank-2 tensors.
//!
//! A [`Tape`] records every primitive evaluated through a [`Var`] handle.
//! Node ids are assigned in evaluation order, so every node's parents have
//! strictly smaller ids and the reverse sweep in [`Tape::backward`] is a
//! plain descending loop.
//!
//! Elementwise binary primitives accept operands of equal shape, or one
//! `1x1` operand that is broadcast over the other.
//!
//! Shape mismatches are programming errors and panic. Domain errors that
//! depend on runtime values (division by an exact zero, square root of a
//! negative number) are returned as [`Error::Domain`].

use std::cell::RefCell;
use std::f64::consts::LN_10;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

/// Inputs of `log10` below this value are clamped to it.
pub const LOG10_FLOOR: f64 = 1e-30;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Powf(NodeId, f64),
    Sin(NodeId),
    Cos(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    Log10(NodeId),
    Relu(NodeId),
    ClampMin(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulT(NodeId, NodeId),
    Transpose(NodeId),
    AddRow(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCol(NodeId, usize),
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::AddRow(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Powf(a, _)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Sqrt(a)
            | Op::Abs(a)
            | Op::Log10(a)
            | Op::Relu(a)
            | Op::ClampMin(a, _)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SliceCol(a, _) => vec![*a],
            Op::ConcatCols(ids) => ids.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Deliberately wrong adjoint rules, used to prove that gradient checking
/// catches a broken primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// `cos` back-propagates `+sin(x)` instead of `-sin(x)`.
    CosAdjointSign,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    fault: Option<Fault>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: Fault) -> Self {
        Self {
            nodes: RefCell::default(),
            fault: Some(fault),
        }
    }

    pub fn fault(&self) -> Option<Fault> {
        self.fault
    }

    /// Number of recorded nodes (leaves plus primitives).
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an input tensor (parameter, data or constant).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(value))
    }

    pub fn is_leaf(&self, var: Var<'_>) -> bool {
        matches!(self.nodes.borrow()[var.id].op, Op::Leaf)
    }

    /// Concatenates tensors with equal row counts along the column axis.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].id].value.rows();
            let cols: usize = parts.iter().map(|p| nodes[p.id].value.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    let v = &nodes[p.id].value;
                    assert_eq!(v.rows(), rows, "concat_cols row counts differ");
                    data.extend_from_slice(v.row_slice(r));
                }
            }
            Tensor::from_raw(rows, cols, data)
        };
        for p in parts {
            self.check_owner(*p);
        }
        self.push(Op::ConcatCols(parts.iter().map(|p| p.id).collect()), value)
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        debug_assert!(op.parents().iter().all(|&p| p < id));
        nodes.push(Node { op, value });
        Var { tape: self, id }
    }

    fn check_owner(&self, var: Var<'_>) {
        assert!(
            std::ptr::eq(self, var.tape),
            "variable belongs to a different tape"
        );
    }

    fn value_of(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    /// Propagates adjoints from a scalar `root` to every ancestor.
    ///
    /// # Panics
    ///
    /// If `root` is not `1x1` or belongs to another tape.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        self.check_owner(root);
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.id].value.shape();
        assert_eq!(
            root_shape,
            (1, 1),
            "backward needs a scalar root, got {root_shape:?}"
        );

        let mut adj: Vec<Option<Tensor>> = vec![None; root.id + 1];
        adj[root.id] = Some(Tensor::ones(1, 1));
        let mut visited = 0;
        for id in (0..=root.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            visited += 1;
            self.propagate(&nodes, id, &g, &mut adj);
            adj[id] = Some(g);
        }
        Gradients { adj, visited }
    }

    fn propagate(&self, nodes: &[Node], id: NodeId, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &nodes[id];
        let val = |i: NodeId| &nodes[i].value;
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(adj, a, reduce_to(g.clone(), val(a)));
                accumulate(adj, b, reduce_to(g.clone(), val(b)));
            }
            Op::Sub(a, b) => {
                accumulate(adj, a, reduce_to(g.clone(), val(a)));
                accumulate(adj, b, reduce_to(g.map(|v| -v), val(b)));
            }
            Op::Mul(a, b) => {
                let ga = broadcast_zip(g, val(b), |g, b| g * b);
                let gb = broadcast_zip(g, val(a), |g, a| g * a);
                accumulate(adj, a, reduce_to(ga, val(a)));
                accumulate(adj, b, reduce_to(gb, val(b)));
            }
            Op::Div(a, b) => {
                let ga = broadcast_zip(g, val(b), |g, b| g / b);
                // d(a/b)/db = -out/b
                let out_over_b = broadcast_zip(&node.value, val(b), |o, b| o / b);
                let gb = broadcast_zip(g, &out_over_b, |g, q| -g * q);
                accumulate(adj, a, reduce_to(ga, val(a)));
                accumulate(adj, b, reduce_to(gb, val(b)));
            }
            Op::Neg(a) => accumulate(adj, a, g.map(|v| -v)),
            Op::Powf(a, p) => {
                let ga = zip(g, val(a), |g, x| g * p * x.powf(p - 1.0));
                accumulate(adj, a, ga);
            }
            Op::Sin(a) => accumulate(adj, a, zip(g, val(a), |g, x| g * x.cos())),
            Op::Cos(a) => {
                let sign = if self.fault == Some(Fault::CosAdjointSign) {
                    1.0
                } else {
                    -1.0
                };
                accumulate(adj, a, zip(g, val(a), |g, x| sign * g * x.sin()));
            }
            Op::Sqrt(a) => accumulate(adj, a, zip(g, &node.value, |g, s| 0.5 * g / s)),
            Op::Abs(a) => {
                let ga = zip(g, val(a), |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                });
                accumulate(adj, a, ga);
            }
            Op::Log10(a) => {
                let ga = zip(g, val(a), |g, x| {
                    if x > LOG10_FLOOR {
                        g / (x * LN_10)
                    } else {
                        0.0
                    }
                });
                accumulate(adj, a, ga);
            }
            Op::Relu(a) => {
                accumulate(adj, a, zip(g, val(a), |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::ClampMin(a, floor) => {
                let ga = zip(g, val(a), |g, x| if x > floor { g } else { 0.0 });
                accumulate(adj, a, ga);
            }
            Op::MatMul(a, b) => {
                accumulate(adj, a, g.matmul_t(val(b)));
                accumulate(adj, b, val(a).t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                accumulate(adj, a, g.matmul(val(b)));
                accumulate(adj, b, g.t_matmul(val(a)));
            }
            Op::Transpose(a) => accumulate(adj, a, g.transpose()),
            Op::AddRow(a, row) => {
                accumulate(adj, a, g.clone());
                let mut sums = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (s, v) in sums.iter_mut().zip(g.row_slice(r)) {
                        *s += v;
                    }
                }
                accumulate(adj, row, Tensor::from_raw(1, g.cols(), sums));
            }
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                accumulate(adj, a, Tensor::from_raw(r, c, vec![g.item(); r * c]));
            }
            Op::Mean(a) => {
                let (r, c) = val(a).shape();
                accumulate(adj, a, Tensor::from_raw(r, c, vec![g.item() / (r * c) as f64; r * c]));
            }
            Op::ConcatCols(ref ids) => {
                let mut offset = 0;
                for &p in ids {
                    let (rows, cols) = val(p).shape();
                    let mut data = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row_slice(r)[offset..offset + cols]);
                    }
                    accumulate(adj, p, Tensor::from_raw(rows, cols, data));
                    offset += cols;
                }
            }
            Op::SliceCol(a, col) => {
                let (rows, cols) = val(a).shape();
                let mut data = vec![0.0; rows * cols];
                for r in 0..rows {
                    data[r * cols + col] = g.data()[r];
                }
                accumulate(adj, a, Tensor::from_raw(rows, cols, data));
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, contrib: Tensor) {
    match &mut adj[id] {
        Some(existing) => existing.add_assign(&contrib),
        slot @ None => *slot = Some(contrib),
    }
}

/// Sums a broadcast gradient back down to a scalar operand's shape.
fn reduce_to(g: Tensor, target: &Tensor) -> Tensor {
    if target.shape() == g.shape() {
        g
    } else {
        debug_assert!(target.is_scalar());
        Tensor::from_raw(1, 1, vec![g.sum()])
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_raw(a.rows(), a.cols(), data)
}

fn broadcast_shape(op: &str, a: &Tensor, b: &Tensor) -> (usize, usize) {
    if a.shape() == b.shape() || b.is_scalar() {
        a.shape()
    } else if a.is_scalar() {
        b.shape()
    } else {
        panic!(
            "{op}: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )
    }
}

fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (rows, cols) = broadcast_shape("elementwise", a, b);
    let data = if a.shape() == b.shape() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    } else if b.is_scalar() {
        let y = b.item();
        a.data().iter().map(|&x| f(x, y)).collect()
    } else {
        let x = a.item();
        b.data().iter().map(|&y| f(x, y)).collect()
    };
    Tensor::from_raw(rows, cols, data)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.map(f)
        };
        self.tape.push(op, value)
    }

    fn binary(self, rhs: Var<'t>, op: fn(NodeId, NodeId) -> Op, name: &str, f: fn(f64, f64) -> f64) -> Var<'t> {
        self.tape.check_owner(rhs);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            broadcast_shape(name, a, b);
            broadcast_zip(a, b, f)
        };
        self.tape.push(op(self.id, rhs.id), value)
    }

    pub fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul, "mul", |a, b| a * b)
    }

    /// Elementwise division. Any exact zero in the divisor is a domain error.
    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_owner(rhs);
        {
            let nodes = self.tape.nodes.borrow();
            if nodes[rhs.id].value.data().iter().any(|&v| v == 0.0) {
                return Err(Error::domain("division by exact zero"));
            }
        }
        Ok(self.binary(rhs, Op::Div, "div", |a, b| a / b))
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |v| -v)
    }

    /// Raises every element to a constant power.
    pub fn powf(self, p: f64) -> Result<Var<'t>> {
        assert!(p.is_finite(), "exponent must be finite");
        {
            let nodes = self.tape.nodes.borrow();
            let integral = p.fract() == 0.0;
            for &x in nodes[self.id].value.data() {
                if x < 0.0 && !integral {
                    return Err(Error::domain(format!("{x}^{p} is not real")));
                }
                if x == 0.0 && p < 1.0 && p != 0.0 {
                    return Err(Error::domain(format!("0^{p} has no finite derivative")));
                }
            }
        }
        Ok(self.unary(Op::Powf(self.id, p), move |v| v.powf(p)))
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Op::Sin(self.id), f64::sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Op::Cos(self.id), f64::cos)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        {
            let nodes = self.tape.nodes.borrow();
            if let Some(x) = nodes[self.id].value.data().iter().find(|&&x| x < 0.0) {
                return Err(Error::domain(format!("sqrt of negative value {x}")));
            }
        }
        Ok(self.unary(Op::Sqrt(self.id), f64::sqrt))
    }

    /// Absolute value; the adjoint at exactly zero is zero.
    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    /// Base-10 logarithm of `max(x, LOG10_FLOOR)`.
    pub fn log10(self) -> Var<'t> {
        self.unary(Op::Log10(self.id), |v| v.max(LOG10_FLOOR).ln() / LN_10)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |v| v.max(0.0))
    }

    /// `max(x, floor)` elementwise; no gradient flows where the floor is active.
    pub fn clamp_min(self, floor: f64) -> Var<'t> {
        self.unary(Op::ClampMin(self.id, floor), move |v| v.max(floor))
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.check_owner(rhs);
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.matmul(&nodes[rhs.id].value)
        };
        self.tape.push(Op::MatMul(self.id, rhs.id), value)
    }

    /// `self · rhsᵀ`
    pub fn matmul_t(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.check_owner(rhs);
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.matmul_t(&nodes[rhs.id].value)
        };
        self.tape.push(Op::MatMulT(self.id, rhs.id), value)
    }

    pub fn transpose(self) -> Var<'t> {
        let value = self.tape.nodes.borrow()[self.id].value.transpose();
        self.tape.push(Op::Transpose(self.id), value)
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        self.tape.check_owner(row);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, r) = (&nodes[self.id].value, &nodes[row.id].value);
            assert!(
                r.rows() == 1 && r.cols() == a.cols(),
                "add_row: cannot broadcast {:?} over {:?}",
                r.shape(),
                a.shape()
            );
            let mut out = a.clone();
            let cols = a.cols();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += r.data()[i % cols];
            }
            out
        };
        self.tape.push(Op::AddRow(self.id, row.id), value)
    }

    pub fn sum(self) -> Var<'t> {
        let value = Tensor::from_raw(1, 1, vec![self.tape.nodes.borrow()[self.id].value.sum()]);
        self.tape.push(Op::Sum(self.id), value)
    }

    pub fn mean(self) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            assert!(!v.is_empty(), "mean of an empty tensor");
            Tensor::from_raw(1, 1, vec![v.sum() / v.len() as f64])
        };
        self.tape.push(Op::Mean(self.id), value)
    }

    /// Column `col` as a `rows x 1` tensor.
    pub fn slice_col(self, col: usize) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            Tensor::from_raw(v.rows(), 1, v.column_values(col))
        };
        self.tape.push(Op::SliceCol(self.id, col), value)
    }

    /// Multiplies by a constant (records a constant leaf).
    pub fn scale(self, c: f64) -> Var<'t> {
        self.mul(self.tape.scalar(c))
    }

    /// Adds a constant (records a constant leaf).
    pub fn shift(self, c: f64) -> Var<'t> {
        self.add(self.tape.scalar(c))
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}

/// Adjoints of one backward pass, indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.get_id(var.id)
    }

    pub fn get_id(&self, id: NodeId) -> Option<&Tensor> {
        self.adj.get(id).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros of `shape` when `var` is not an ancestor.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = var.shape();
                Tensor::zeros(r, c)
            }
        }
    }

    /// Number of nodes holding an adjoint.
    pub fn len(&self) -> usize {
        self.adj.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nodes processed by the reverse sweep.
    pub fn nodes_visited(&self) -> usize {
        self.visited
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adj
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|_| i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sin_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = x.sin();
        assert_eq!(y.value().item(), 0.0);
        let g = tape.backward(y);
        assert_eq!(g.wrt(x).item(), 1.0);
    }

    #[test]
    fn square_times_sine() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let y = x.powf(2.0).unwrap() * x.sin();
        assert_abs_diff_eq!(y.value().item(), 0.841_470_984_807_896_5, epsilon = 1e-12);
        let g = tape.backward(y);
        assert_abs_diff_eq!(g.wrt(x).item(), 2.223_244_275_483_933, epsilon = 1e-12);
    }

    #[test]
    fn matmul_adjoint_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::full(2, 3, 0.5));
        let b = tape.leaf(Tensor::full(3, 4, 2.0));
        let c = a.matmul(b);
        assert_eq!(c.shape(), (2, 4));
        let g = tape.backward(c.sum());
        assert_eq!(g.wrt(a).shape(), (2, 3));
        assert_eq!(g.wrt(b).shape(), (3, 4));
        // d(sum(AB))/dA = 1 B^T: every entry is a row-sum of B
        assert!(g.wrt(a).data().iter().all(|&v| v == 8.0));
        assert!(g.wrt(b).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn matmul_t_matches_explicit_transpose() {
        let a_val = Tensor::new(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]).unwrap();
        let b_val = Tensor::new(4, 3, (0..12).map(|i| 0.25 * i as f64 - 1.0).collect()).unwrap();
        let w = Tensor::new(2, 4, (0..8).map(|i| 1.0 + i as f64).collect()).unwrap();
        let grads = |fused: bool| {
            let tape = Tape::new();
            let (a, b) = (tape.leaf(a_val.clone()), tape.leaf(b_val.clone()));
            let c = if fused { a.matmul_t(b) } else { a.matmul(b.transpose()) };
            let g = tape.backward((c * tape.leaf(w.clone())).sum());
            (c.value(), g.wrt(a), g.wrt(b))
        };
        assert_eq!(grads(true), grads(false));
    }

    #[test]
    fn constant_root_has_no_ancestors() {
        let tape = Tape::new();
        let c = tape.scalar(4.0);
        let g = tape.backward(c);
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(c).unwrap().item(), 1.0);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let a = tape.scalar(3.0);
        let y = a + a;
        let g = tape.backward(y);
        assert_eq!(g.wrt(a).item(), 2.0);
    }

    #[test]
    fn unreachable_nodes_have_no_entry() {
        let tape = Tape::new();
        let a = tape.scalar(1.0);
        let b = tape.scalar(2.0);
        let _unused = b.sin();
        let y = a.cos();
        let g = tape.backward(y);
        assert!(g.get(b).is_none());
        assert_eq!(g.len(), 2);
        assert_eq!(g.nodes_visited(), 2);
    }

    #[test]
    #[should_panic(expected = "scalar root")]
    fn non_scalar_root_panics() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 1));
        tape.backward(a);
    }

    #[test]
    #[should_panic(expected = "incompatible shapes")]
    fn shape_mismatch_panics() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 1));
        let b = tape.leaf(Tensor::zeros(3, 1));
        let _ = a + b;
    }

    #[test]
    fn division_by_zero_is_domain_error() {
        let tape = Tape::new();
        let a = tape.scalar(1.0);
        let b = tape.leaf(Tensor::row(vec![1.0, 0.0]).unwrap());
        assert!(matches!(a.div(b), Err(Error::Domain(_))));
    }

    #[test]
    fn sqrt_of_negative_is_domain_error() {
        let tape = Tape::new();
        assert!(tape.scalar(-1.0).sqrt().is_err());
    }

    #[test]
    fn abs_adjoint_at_zero_is_zero() {
        let tape = Tape::new();
        let x = tape.scalar(0.0);
        let g = tape.backward(x.abs());
        assert_eq!(g.wrt(x).item(), 0.0);
    }

    #[test]
    fn log10_clamps_tiny_inputs() {
        let tape = Tape::new();
        let x = tape.scalar(0.0);
        let y = x.log10();
        assert!((y.value().item() + 30.0).abs() < 1e-12);
        assert_eq!(tape.backward(y).wrt(x).item(), 0.0);
    }

    #[test]
    fn scalar_broadcast_reduces_adjoint() {
        let tape = Tape::new();
        let s = tape.scalar(2.0);
        let v = tape.leaf(Tensor::row(vec![1.0, 2.0, 3.0]).unwrap());
        let y = (v * s).sum();
        let g = tape.backward(y);
        assert_eq!(g.wrt(s).item(), 6.0);
        assert_eq!(g.wrt(v).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_and_slice_round_trip_adjoints() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::column(vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::from_rows(&[[3.0, 4.0], [5.0, 6.0]]).unwrap());
        let c = tape.concat_cols(&[a, b]);
        assert_eq!(c.value().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let y = c.slice_col(2).scale(3.0).sum();
        let g = tape.backward(y);
        assert_eq!(g.wrt(a).data(), &[0.0, 0.0]);
        assert_eq!(g.wrt(b).data(), &[0.0, 3.0, 0.0, 3.0]);
    }

    #[test]
    fn add_row_adjoint_sums_columns() {
        let tape = Tape::new();
        let m = tape.leaf(Tensor::zeros(3, 2));
        let r = tape.leaf(Tensor::row(vec![1.0, -1.0]).unwrap());
        let y = m.add_row(r).sum();
        assert_eq!(tape.backward(y).wrt(r).data(), &[3.0, 3.0]);
    }

    #[test]
    fn node_count_is_leaves_plus_primitives() {
        let tape = Tape::new();
        let a = tape.scalar(0.3);
        let b = tape.scalar(0.7);
        let c = a * b; // 1
        let d = c.sin(); // 2
        let e = d.add(a); // 3
        let _ = e.relu(); // 4
        assert_eq!(tape.len(), 2 + 4);
    }

    #[test]
    fn faulty_cos_flips_sign() {
        let tape = Tape::with_fault(Fault::CosAdjointSign);
        let x = tape.scalar(1.0);
        let g = tape.backward(x.cos());
        assert_abs_diff_eq!(g.wrt(x).item(), 1.0_f64.sin(), epsilon = 1e-15);
    }
}
