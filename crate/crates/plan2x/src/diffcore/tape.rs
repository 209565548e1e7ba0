use std::cell::RefCell;
use std::collections::HashMap;

use crate::diffcore::kernels::{
    matmul_abt_acc, matmul_acc, matmul_atb_acc, stable_sigmoid, stable_softplus,
};
use crate::diffcore::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    MaxScalar(usize, f64),
    Square(usize),
    Sqrt(usize),
    Matmul(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Elu(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    SumAll(usize),
    MeanAll(usize),
    SumCols(usize),
    AddRow(usize, usize),
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
    StopGrad,
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    needs_grad: bool,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    leaves: HashMap<u64, usize>,
    consumed: bool,
}

/// Records primitive operations for one forward pass.
///
/// Nodes are appended in topological order by construction; the backward
/// pass is a single reverse sweep that visits each node exactly once and
/// is then done with the tape.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

/// Gradients keyed by the id of the leaf tensor they belong to.
pub struct Gradients {
    grads: HashMap<u64, Tensor>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        self.grads.get(&t.id())
    }

    pub fn by_id(&self, id: u64) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn contains(&self, t: &Tensor) -> bool {
        self.grads.contains_key(&t.id())
    }

    /// Number of nodes processed by the backward sweep.
    pub fn nodes_visited(&self) -> usize {
        self.visited
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lifts a tensor onto the tape. Repeated lifts of the same tensor
    /// return the same node so shared parameters accumulate gradients.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        assert!(!inner.consumed, "tape already consumed by backward");
        if let Some(&idx) = inner.leaves.get(&t.id()) {
            return Var { tape: self, idx };
        }
        let (rows, cols) = t.dims2();
        let idx = inner.nodes.len();
        inner.nodes.push(Node {
            op: Op::Leaf,
            rows,
            cols,
            values: t.data().to_vec(),
            needs_grad: t.requires_grad(),
        });
        inner.leaves.insert(t.id(), idx);
        Var { tape: self, idx }
    }

    /// Records a constant that never receives gradients.
    pub fn constant(&self, rows: usize, cols: usize, values: Vec<f64>) -> Var<'_> {
        assert_eq!(rows * cols, values.len(), "constant shape mismatch");
        let mut inner = self.inner.borrow_mut();
        assert!(!inner.consumed, "tape already consumed by backward");
        let idx = inner.nodes.len();
        inner.nodes.push(Node {
            op: Op::Leaf,
            rows,
            cols,
            values,
            needs_grad: false,
        });
        Var { tape: self, idx }
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(1, 1, vec![v])
    }

    /// Lifts a tensor's values as a gradient-free constant.
    pub fn constant_from(&self, t: &Tensor) -> Var<'_> {
        let (r, c) = t.dims2();
        self.constant(r, c, t.data().to_vec())
    }

    fn push(&self, op: Op, rows: usize, cols: usize, values: Vec<f64>, needs_grad: bool) -> usize {
        let mut inner = self.inner.borrow_mut();
        assert!(!inner.consumed, "tape already consumed by backward");
        let idx = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            rows,
            cols,
            values,
            needs_grad,
        });
        idx
    }

    /// Reverse sweep from a scalar loss. Consumes the tape: no further
    /// recording or second backward is possible, though recorded values
    /// stay readable.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(loss.tape, self), "loss lives on another tape");
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::invalid("tape already consumed by backward"));
        }
        let loss_node = &inner.nodes[loss.idx];
        if loss_node.rows * loss_node.cols != 1 {
            return Err(Error::NonScalarLoss(vec![loss_node.rows, loss_node.cols]));
        }
        inner.consumed = true;

        let n = inner.nodes.len();
        let mut adjoint: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        adjoint[loss.idx] = Some(vec![1.0]);
        let mut visited = 0usize;

        for idx in (0..=loss.idx).rev() {
            if !inner.nodes[idx].needs_grad {
                continue;
            }
            // Leaves keep their adjoints; they are collected below.
            if matches!(inner.nodes[idx].op, Op::Leaf) {
                if adjoint[idx].is_some() {
                    visited += 1;
                }
                continue;
            }
            let Some(g) = adjoint[idx].take() else {
                continue;
            };
            visited += 1;
            let (rows, cols) = (inner.nodes[idx].rows, inner.nodes[idx].cols);
            let op = inner.nodes[idx].op;
            let add_to = |inner: &TapeInner,
                              adjoint: &mut Vec<Option<Vec<f64>>>,
                              parent: usize,
                              f: &mut dyn FnMut(&mut [f64])| {
                if !inner.nodes[parent].needs_grad {
                    return;
                }
                let len = inner.nodes[parent].values.len();
                let buf = adjoint[parent].get_or_insert_with(|| vec![0.0; len]);
                f(buf);
            };
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for (o, gi) in buf.iter_mut().zip(&g) {
                            *o += gi;
                        }
                    });
                    add_to(&inner, &mut adjoint, b, &mut |buf| {
                        for (o, gi) in buf.iter_mut().zip(&g) {
                            *o += gi;
                        }
                    });
                }
                Op::Sub(a, b) => {
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for (o, gi) in buf.iter_mut().zip(&g) {
                            *o += gi;
                        }
                    });
                    add_to(&inner, &mut adjoint, b, &mut |buf| {
                        for (o, gi) in buf.iter_mut().zip(&g) {
                            *o -= gi;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&inner.nodes[a].values, &inner.nodes[b].values);
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * bv[i];
                        }
                    });
                    add_to(&inner, &mut adjoint, b, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * av[i];
                        }
                    });
                }
                Op::Div(a, b) => {
                    let (av, bv) = (&inner.nodes[a].values, &inner.nodes[b].values);
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] / bv[i];
                        }
                    });
                    add_to(&inner, &mut adjoint, b, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                        }
                    });
                }
                Op::Neg(a) => add_to(&inner, &mut adjoint, a, &mut |buf| {
                    for (o, gi) in buf.iter_mut().zip(&g) {
                        *o -= gi;
                    }
                }),
                Op::Scale(a, c) => add_to(&inner, &mut adjoint, a, &mut |buf| {
                    for (o, gi) in buf.iter_mut().zip(&g) {
                        *o += gi * c;
                    }
                }),
                Op::Offset(a) => add_to(&inner, &mut adjoint, a, &mut |buf| {
                    for (o, gi) in buf.iter_mut().zip(&g) {
                        *o += gi;
                    }
                }),
                Op::MaxScalar(a, c) => {
                    let av = &inner.nodes[a].values;
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..buf.len() {
                            if av[i] > c {
                                buf[i] += g[i];
                            }
                        }
                    });
                }
                Op::Square(a) => {
                    let av = &inner.nodes[a].values;
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += 2.0 * av[i] * g[i];
                        }
                    });
                }
                Op::Sqrt(a) => {
                    let yv = &inner.nodes[idx].values;
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += 0.5 * g[i] / yv[i];
                        }
                    });
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (inner.nodes[a].rows, inner.nodes[a].cols);
                    let nn = inner.nodes[b].cols;
                    let (av, bv) = (&inner.nodes[a].values, &inner.nodes[b].values);
                    // dA = g @ B^T
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        matmul_abt_acc(buf, &g, bv, m, nn, k);
                    });
                    // dB = A^T @ g
                    add_to(&inner, &mut adjoint, b, &mut |buf| {
                        matmul_atb_acc(buf, av, &g, m, k, nn);
                    });
                }
                Op::Tanh(a) => {
                    let yv = &inner.nodes[idx].values;
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * (1.0 - yv[i] * yv[i]);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let yv = &inner.nodes[idx].values;
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * yv[i] * (1.0 - yv[i]);
                        }
                    });
                }
                Op::Elu(a) => {
                    let av = &inner.nodes[a].values;
                    let yv = &inner.nodes[idx].values;
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * if av[i] > 0.0 { 1.0 } else { yv[i] + 1.0 };
                        }
                    });
                }
                Op::Softplus(a) => {
                    let av = &inner.nodes[a].values;
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * stable_sigmoid(av[i]);
                        }
                    });
                }
                Op::Exp(a) => {
                    let yv = &inner.nodes[idx].values;
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * yv[i];
                        }
                    });
                }
                Op::Log(a) => {
                    let av = &inner.nodes[a].values;
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] / av[i];
                        }
                    });
                }
                Op::SumAll(a) => add_to(&inner, &mut adjoint, a, &mut |buf| {
                    for o in buf.iter_mut() {
                        *o += g[0];
                    }
                }),
                Op::MeanAll(a) => {
                    let len = inner.nodes[a].values.len() as f64;
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for o in buf.iter_mut() {
                            *o += g[0] / len;
                        }
                    });
                }
                Op::SumCols(a) => {
                    let pc = inner.nodes[a].cols;
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..rows {
                            for j in 0..pc {
                                buf[i * pc + j] += g[i];
                            }
                        }
                    });
                }
                Op::AddRow(a, b) => {
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for (o, gi) in buf.iter_mut().zip(&g) {
                            *o += gi;
                        }
                    });
                    add_to(&inner, &mut adjoint, b, &mut |buf| {
                        for i in 0..rows {
                            for j in 0..cols {
                                buf[j] += g[i * cols + j];
                            }
                        }
                    });
                }
                Op::ConcatCols(a, b) => {
                    let ac = inner.nodes[a].cols;
                    let bc = inner.nodes[b].cols;
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..rows {
                            for j in 0..ac {
                                buf[i * ac + j] += g[i * cols + j];
                            }
                        }
                    });
                    add_to(&inner, &mut adjoint, b, &mut |buf| {
                        for i in 0..rows {
                            for j in 0..bc {
                                buf[i * bc + j] += g[i * cols + ac + j];
                            }
                        }
                    });
                }
                Op::SliceCols(a, start) => {
                    let pc = inner.nodes[a].cols;
                    add_to(&inner, &mut adjoint, a, &mut |buf| {
                        for i in 0..rows {
                            for j in 0..cols {
                                buf[i * pc + start + j] += g[i * cols + j];
                            }
                        }
                    });
                }
                Op::StopGrad => {}
            }
        }

        let mut grads = HashMap::new();
        for (&tensor_id, &idx) in inner.leaves.iter() {
            if let Some(buf) = adjoint[idx].take() {
                let node = &inner.nodes[idx];
                grads.insert(
                    tensor_id,
                    Tensor::from_raw(vec![node.rows, node.cols], buf),
                );
            }
        }
        Ok(Gradients { grads, visited })
    }
}

impl<'t> Var<'t> {
    fn node<R>(&self, f: impl FnOnce(&Node) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.idx])
    }

    pub fn rows(&self) -> usize {
        self.node(|n| n.rows)
    }

    pub fn cols(&self) -> usize {
        self.node(|n| n.cols)
    }

    pub fn values(&self) -> Vec<f64> {
        self.node(|n| n.values.clone())
    }

    pub fn scalar_value(&self) -> f64 {
        self.node(|n| {
            assert_eq!(n.values.len(), 1, "scalar_value on non-scalar");
            n.values[0]
        })
    }

    /// Copies the recorded values out as a detached tensor.
    pub fn to_tensor(&self) -> Tensor {
        self.node(|n| Tensor::from_raw(vec![n.rows, n.cols], n.values.clone()))
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands live on different tapes"
        );
    }

    fn binary_elementwise(
        &self,
        other: Var<'t>,
        op_name: &'static str,
        make_op: impl FnOnce(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Var<'t> {
        self.same_tape(&other);
        let (r1, c1, r2, c2) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            let b = &inner.nodes[other.idx];
            (a.rows, a.cols, b.rows, b.cols)
        };
        assert!(
            r1 == r2 && c1 == c2,
            "shape mismatch in {op_name}: [{r1}, {c1}] vs [{r2}, {c2}]"
        );
        let (values, needs) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.idx];
            let b = &inner.nodes[other.idx];
            let values = a
                .values
                .iter()
                .zip(&b.values)
                .map(|(&x, &y)| f(x, y))
                .collect();
            (values, a.needs_grad || b.needs_grad)
        };
        let idx = self
            .tape
            .push(make_op(self.idx, other.idx), r1, c1, values, needs);
        Var {
            tape: self.tape,
            idx,
        }
    }

    fn unary(
        &self,
        make_op: impl FnOnce(usize) -> Op,
        f: impl Fn(f64) -> f64,
        needs_override: Option<bool>,
    ) -> Var<'t> {
        let (rows, cols, values, needs) = self.node(|n| {
            (
                n.rows,
                n.cols,
                n.values.iter().map(|&x| f(x)).collect::<Vec<f64>>(),
                n.needs_grad,
            )
        });
        let idx = self.tape.push(
            make_op(self.idx),
            rows,
            cols,
            values,
            needs_override.unwrap_or(needs),
        );
        Var {
            tape: self.tape,
            idx,
        }
    }

    pub fn add(&self, other: Var<'t>) -> Var<'t> {
        self.binary_elementwise(other, "add", |a, b| Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, other: Var<'t>) -> Var<'t> {
        self.binary_elementwise(other, "sub", |a, b| Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&self, other: Var<'t>) -> Var<'t> {
        self.binary_elementwise(other, "mul", |a, b| Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&self, other: Var<'t>) -> Var<'t> {
        self.binary_elementwise(other, "div", |a, b| Op::Div(a, b), |x, y| x / y)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg, |x| -x, None)
    }

    pub fn mul_scalar(&self, c: f64) -> Var<'t> {
        self.unary(|a| Op::Scale(a, c), |x| x * c, None)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::Offset, |x| x + c, None)
    }

    /// Elementwise max(x, c); gradient passes only where x > c.
    pub fn max_scalar(&self, c: f64) -> Var<'t> {
        self.unary(|a| Op::MaxScalar(a, c), |x| x.max(c), None)
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Op::Square, |x| x * x, None)
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.unary(Op::Sqrt, |x| x.sqrt(), None)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh, |x| x.tanh(), None)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid, stable_sigmoid, None)
    }

    pub fn elu(&self) -> Var<'t> {
        self.unary(Op::Elu, |x| if x > 0.0 { x } else { x.exp() - 1.0 }, None)
    }

    pub fn softplus(&self) -> Var<'t> {
        self.unary(Op::Softplus, stable_softplus, None)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp, |x| x.exp(), None)
    }

    pub fn log(&self) -> Var<'t> {
        self.unary(Op::Log, |x| x.ln(), None)
    }

    /// Severs the gradient edge: values pass through, gradients do not.
    pub fn stop_gradient(&self) -> Var<'t> {
        self.unary(|_| Op::StopGrad, |x| x, Some(false))
    }

    pub fn matmul(&self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.idx];
        let b = &inner.nodes[other.idx];
        assert!(
            a.cols == b.rows,
            "shape mismatch in matmul: [{}, {}] vs [{}, {}]",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        );
        let (m, k, n) = (a.rows, a.cols, b.cols);
        let mut values = vec![0.0; m * n];
        matmul_acc(&mut values, &a.values, &b.values, m, k, n);
        let needs = a.needs_grad || b.needs_grad;
        drop(inner);
        let idx = self
            .tape
            .push(Op::Matmul(self.idx, other.idx), m, n, values, needs);
        Var {
            tape: self.tape,
            idx,
        }
    }

    pub fn sum_all(&self) -> Var<'t> {
        let (values, needs) = self.node(|n| (vec![n.values.iter().sum()], n.needs_grad));
        let idx = self.tape.push(Op::SumAll(self.idx), 1, 1, values, needs);
        Var {
            tape: self.tape,
            idx,
        }
    }

    pub fn mean_all(&self) -> Var<'t> {
        let (values, needs) = self.node(|n| {
            let len = n.values.len() as f64;
            (vec![n.values.iter().sum::<f64>() / len], n.needs_grad)
        });
        let idx = self.tape.push(Op::MeanAll(self.idx), 1, 1, values, needs);
        Var {
            tape: self.tape,
            idx,
        }
    }

    /// Row-wise sum: [m, n] -> [m, 1].
    pub fn sum_cols(&self) -> Var<'t> {
        let (rows, values, needs) = self.node(|n| {
            let mut out = vec![0.0; n.rows];
            for i in 0..n.rows {
                out[i] = n.values[i * n.cols..(i + 1) * n.cols].iter().sum();
            }
            (n.rows, out, n.needs_grad)
        });
        let idx = self.tape.push(Op::SumCols(self.idx), rows, 1, values, needs);
        Var {
            tape: self.tape,
            idx,
        }
    }

    /// Row-wise mean: [m, n] -> [m, 1].
    pub fn mean_cols(&self) -> Var<'t> {
        let c = self.cols() as f64;
        self.sum_cols().mul_scalar(1.0 / c)
    }

    /// Adds a [1, n] bias row to every row of [m, n].
    pub fn add_row(&self, bias: Var<'t>) -> Var<'t> {
        self.same_tape(&bias);
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.idx];
        let b = &inner.nodes[bias.idx];
        assert!(
            b.rows == 1 && b.cols == a.cols,
            "shape mismatch in add_row: [{}, {}] vs [{}, {}]",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        );
        let mut values = a.values.clone();
        for i in 0..a.rows {
            for j in 0..a.cols {
                values[i * a.cols + j] += b.values[j];
            }
        }
        let (rows, cols, needs) = (a.rows, a.cols, a.needs_grad || b.needs_grad);
        drop(inner);
        let idx = self
            .tape
            .push(Op::AddRow(self.idx, bias.idx), rows, cols, values, needs);
        Var {
            tape: self.tape,
            idx,
        }
    }

    /// Concatenates along the feature axis: [m, a] ++ [m, b] -> [m, a+b].
    pub fn concat_cols(&self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.idx];
        let b = &inner.nodes[other.idx];
        assert!(
            a.rows == b.rows,
            "shape mismatch in concat_cols: [{}, {}] vs [{}, {}]",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        );
        let cols = a.cols + b.cols;
        let mut values = vec![0.0; a.rows * cols];
        for i in 0..a.rows {
            values[i * cols..i * cols + a.cols]
                .copy_from_slice(&a.values[i * a.cols..(i + 1) * a.cols]);
            values[i * cols + a.cols..(i + 1) * cols]
                .copy_from_slice(&b.values[i * b.cols..(i + 1) * b.cols]);
        }
        let (rows, needs) = (a.rows, a.needs_grad || b.needs_grad);
        drop(inner);
        let idx = self.tape.push(
            Op::ConcatCols(self.idx, other.idx),
            rows,
            cols,
            values,
            needs,
        );
        Var {
            tape: self.tape,
            idx,
        }
    }

    /// Takes columns [start, start+len) of every row.
    pub fn slice_cols(&self, start: usize, len: usize) -> Var<'t> {
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.idx];
        assert!(
            start + len <= a.cols,
            "slice_cols [{start}, {}) out of range for [{}, {}]",
            start + len,
            a.rows,
            a.cols
        );
        let mut values = vec![0.0; a.rows * len];
        for i in 0..a.rows {
            values[i * len..(i + 1) * len]
                .copy_from_slice(&a.values[i * a.cols + start..i * a.cols + start + len]);
        }
        let (rows, needs) = (a.rows, a.needs_grad);
        drop(inner);
        let idx = self
            .tape
            .push(Op::SliceCols(self.idx, start), rows, len, values, needs);
        Var {
            tape: self.tape,
            idx,
        }
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(&self, rhs)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(&self, rhs)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(&self, rhs)
    }
}

/// Log-density of diagonal Gaussians, summed over features: [m, 1].
pub fn gaussian_log_density<'t>(x: Var<'t>, mean: Var<'t>, std: Var<'t>) -> Var<'t> {
    const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;
    let z = (x - mean).div(std);
    let per_dim = z
        .square()
        .mul_scalar(-0.5)
        .sub(std.log())
        .add_scalar(-HALF_LN_TWO_PI);
    per_dim.sum_cols()
}

/// Log-density under unit-variance diagonal Gaussians: [m, 1].
pub fn gaussian_log_density_unit<'t>(x: Var<'t>, mean: Var<'t>) -> Var<'t> {
    const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;
    let d = x.cols() as f64;
    (x - mean)
        .square()
        .mul_scalar(-0.5)
        .sum_cols()
        .add_scalar(-HALF_LN_TWO_PI * d)
}

/// KL(q ‖ p) between diagonal Gaussians, summed over features: [m, 1].
pub fn gaussian_kl<'t>(
    mean_q: Var<'t>,
    std_q: Var<'t>,
    mean_p: Var<'t>,
    std_p: Var<'t>,
) -> Var<'t> {
    let log_ratio = std_p.log() - std_q.log();
    let var_term = (std_q.square() + (mean_q - mean_p).square()).div(std_p.square().mul_scalar(2.0));
    (log_ratio + var_term).add_scalar(-0.5).sum_cols()
}

/// mean + std ⊙ noise, with externally supplied standard-normal noise.
pub fn reparam_sample<'t>(mean: Var<'t>, std: Var<'t>, noise: Var<'t>) -> Var<'t> {
    mean + std.mul(noise)
}
