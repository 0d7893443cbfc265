//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles in
//! execution order. [`Tape::backward`] replays the adjoint rules in reverse
//! order. Accumulation order is fixed by the tape order, so repeated runs
//! produce bit-identical gradients.
//!
//! Tapes are meant to live for a single optimization step: build one, run the
//! forward pass, call `backward`, hand the gradients to the optimizer and drop
//! the tape.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use super::dense::{gemm, Tensor};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Unary {
    Exp,
    Log,
    Tanh,
    LeakyRelu(f64),
    Square,
    Clamp(f64, f64),
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Binary(Binary, usize, usize),
    Scale(usize, f64),
    Unary(Unary, usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    Concat(usize, usize),
    SliceRows(usize, usize),
    Gather(usize, Vec<usize>),
    Transpose(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
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

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Binds a named parameter. Repeated calls within one tape return the same node,
    /// so every use of the parameter accumulates into a single gradient.
    pub fn param(&self, store: &ParamStore, name: &str) -> Result<Var<'_>> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Ok(Var { tape: self, id });
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        let var = self.leaf(value);
        self.params.borrow_mut().insert(name.to_string(), var.id);
        Ok(var)
    }

    /// Names of the parameters bound so far.
    pub fn bound_params(&self) -> Vec<String> {
        let mut names: Vec<_> = self.params.borrow().keys().cloned().collect();
        names.sort();
        names
    }

    /// Propagates adjoints from a scalar `loss` back to every differentiable leaf.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(loss.tape, self), "loss recorded on another tape");
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, id, &g, &mut grads);
            // keep non-leaf adjoints out of the result; leaves are what callers query
        }

        let mut out = Vec::with_capacity(grads.len());
        for (id, g) in grads.into_iter().enumerate() {
            let node = &nodes[id];
            let keep = matches!(node.op, Op::Leaf) && node.needs_grad;
            out.push(if keep {
                Some(g.unwrap_or_else(|| vec![0.0; node.value.len()]))
            } else {
                None
            });
        }
        let shapes = nodes.iter().take(out.len()).map(|n| n.value.shape()).collect();
        Ok(Gradients { grads: out, shapes })
    }

    /// Gradient of every bound parameter, keyed by name.
    pub fn param_grads(&self, grads: &Gradients) -> ParamGrads {
        let params = self.params.borrow();
        let mut map = BTreeMap::new();
        for (name, &id) in params.iter() {
            let g = grads.by_id(id).unwrap_or_else(|| {
                let (r, c) = self.nodes.borrow()[id].value.shape();
                Tensor::zeros(r, c)
            });
            map.insert(name.clone(), g);
        }
        ParamGrads(map)
    }

    fn binary<'t>(&'t self, kind: Binary, a: Var<'t>, b: Var<'t>, op: &'static str) -> Result<Var<'t>> {
        let nodes = self.nodes.borrow();
        let (x, y) = (&nodes[a.id], &nodes[b.id]);
        let out_shape = broadcast_shape(x.value.shape(), y.value.shape()).ok_or(Error::ShapeMismatch {
            op,
            left: x.value.shape(),
            right: y.value.shape(),
        })?;
        let f = match kind {
            Binary::Add => |p: f64, q: f64| p + q,
            Binary::Sub => |p: f64, q: f64| p - q,
            Binary::Mul => |p: f64, q: f64| p * q,
        };
        let value = if x.value.shape() == y.value.shape() {
            let data = x
                .value
                .data()
                .iter()
                .zip(y.value.data())
                .map(|(&p, &q)| f(p, q))
                .collect();
            Tensor::new(out_shape.0, out_shape.1, data)?
        } else {
            let (xs, ys) = (x.value.shape(), y.value.shape());
            Tensor::from_fn(out_shape.0, out_shape.1, |r, c| {
                f(
                    x.value.data()[bidx(xs, r, c)],
                    y.value.data()[bidx(ys, r, c)],
                )
            })
        };
        let needs = x.needs_grad || y.needs_grad;
        drop(nodes);
        Ok(self.push(value, Op::Binary(kind, a.id, b.id), needs))
    }

    fn unary<'t>(&'t self, kind: Unary, a: Var<'t>) -> Var<'t> {
        let nodes = self.nodes.borrow();
        let x = &nodes[a.id];
        let value = match kind {
            Unary::Exp => x.value.map(f64::exp),
            Unary::Log => x.value.map(f64::ln),
            Unary::Tanh => x.value.map(f64::tanh),
            Unary::LeakyRelu(s) => x.value.map(|v| if v > 0.0 { v } else { s * v }),
            Unary::Square => x.value.map(|v| v * v),
            Unary::Clamp(lo, hi) => x.value.map(|v| v.clamp(lo, hi)),
        };
        let needs = x.needs_grad;
        drop(nodes);
        self.push(value, Op::Unary(kind, a.id), needs)
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }
}

/// Index into a tensor of shape `s` broadcast to the output position (r, c).
#[inline]
fn bidx(s: (usize, usize), r: usize, c: usize) -> usize {
    let rr = if s.0 == 1 { 0 } else { r };
    let cc = if s.1 == 1 { 0 } else { c };
    rr * s.1 + cc
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |p: usize, q: usize| {
        if p == q {
            Some(p)
        } else if p == 1 {
            Some(q)
        } else if q == 1 {
            Some(p)
        } else {
            None
        }
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

/// Adds the contribution `g` (shaped `out`) into a parent of shape `s`, summing broadcast axes.
fn reduce_into(dst: &mut [f64], s: (usize, usize), out: (usize, usize), g: &[f64], scale: impl Fn(usize) -> f64) {
    if s == out {
        for (i, (d, gv)) in dst.iter_mut().zip(g).enumerate() {
            *d += gv * scale(i);
        }
        return;
    }
    for r in 0..out.0 {
        for c in 0..out.1 {
            let i = r * out.1 + c;
            dst[bidx(s, r, c)] += g[i] * scale(i);
        }
    }
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out_shape = node.value.shape();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (x, y) = (&nodes[*a], &nodes[*b]);
            let (m, k) = x.value.shape();
            let n = y.value.cols();
            if x.needs_grad {
                // dA = G · Bᵀ
                accumulate(grads, *a, m * k, |dst| {
                    gemm(m, n, k, g, (n as isize, 1), y.value.data(), (1, n as isize), dst, 1.0)
                });
            }
            if y.needs_grad {
                // dB = Aᵀ · G
                accumulate(grads, *b, k * n, |dst| {
                    gemm(k, m, n, x.value.data(), (1, k as isize), g, (n as isize, 1), dst, 1.0)
                });
            }
        }
        Op::Binary(kind, a, b) => {
            let (x, y) = (&nodes[*a], &nodes[*b]);
            let (xs, ys) = (x.value.shape(), y.value.shape());
            match kind {
                Binary::Add | Binary::Sub => {
                    if x.needs_grad {
                        accumulate(grads, *a, x.value.len(), |d| reduce_into(d, xs, out_shape, g, |_| 1.0));
                    }
                    if y.needs_grad {
                        let sign = if matches!(kind, Binary::Sub) { -1.0 } else { 1.0 };
                        accumulate(grads, *b, y.value.len(), |d| reduce_into(d, ys, out_shape, g, |_| sign));
                    }
                }
                Binary::Mul => {
                    let cols = out_shape.1;
                    if x.needs_grad {
                        let yv = y.value.data();
                        accumulate(grads, *a, x.value.len(), |d| {
                            reduce_into(d, xs, out_shape, g, |i| yv[bidx(ys, i / cols, i % cols)])
                        });
                    }
                    if y.needs_grad {
                        let xv = x.value.data();
                        accumulate(grads, *b, y.value.len(), |d| {
                            reduce_into(d, ys, out_shape, g, |i| xv[bidx(xs, i / cols, i % cols)])
                        });
                    }
                }
            }
        }
        Op::Scale(a, s) => {
            if nodes[*a].needs_grad {
                accumulate(grads, *a, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * s));
            }
        }
        Op::Unary(kind, a) => {
            let x = &nodes[*a];
            if !x.needs_grad {
                return;
            }
            let xv = x.value.data();
            let yv = node.value.data();
            accumulate(grads, *a, g.len(), |d| {
                for i in 0..g.len() {
                    let local = match *kind {
                        Unary::Exp => yv[i],
                        Unary::Log => 1.0 / xv[i],
                        Unary::Tanh => 1.0 - yv[i] * yv[i],
                        Unary::LeakyRelu(s) => {
                            if xv[i] > 0.0 {
                                1.0
                            } else {
                                s
                            }
                        }
                        Unary::Square => 2.0 * xv[i],
                        Unary::Clamp(lo, hi) => {
                            if xv[i] >= lo && xv[i] <= hi {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    };
                    d[i] += g[i] * local;
                }
            });
        }
        Op::Sum(a) | Op::Mean(a) => {
            let x = &nodes[*a];
            if x.needs_grad {
                let n = x.value.len();
                let v = if matches!(node.op, Op::Mean(_)) { g[0] / n as f64 } else { g[0] };
                accumulate(grads, *a, n, |d| d.iter_mut().for_each(|d| *d += v));
            }
        }
        Op::RowSum(a) => {
            let x = &nodes[*a];
            if x.needs_grad {
                let cols = x.value.cols();
                accumulate(grads, *a, x.value.len(), |d| {
                    for (i, dv) in d.iter_mut().enumerate() {
                        *dv += g[i / cols];
                    }
                });
            }
        }
        Op::Concat(a, b) => {
            let (x, y) = (&nodes[*a], &nodes[*b]);
            let (ca, cb) = (x.value.cols(), y.value.cols());
            let cols = ca + cb;
            if x.needs_grad {
                accumulate(grads, *a, x.value.len(), |d| {
                    for r in 0..out_shape.0 {
                        for c in 0..ca {
                            d[r * ca + c] += g[r * cols + c];
                        }
                    }
                });
            }
            if y.needs_grad {
                accumulate(grads, *b, y.value.len(), |d| {
                    for r in 0..out_shape.0 {
                        for c in 0..cb {
                            d[r * cb + c] += g[r * cols + ca + c];
                        }
                    }
                });
            }
        }
        Op::SliceRows(a, start) => {
            let x = &nodes[*a];
            if x.needs_grad {
                let cols = x.value.cols();
                let off = start * cols;
                accumulate(grads, *a, x.value.len(), |d| {
                    d[off..off + g.len()].iter_mut().zip(g).for_each(|(d, gv)| *d += gv)
                });
            }
        }
        Op::Gather(a, idx) => {
            let x = &nodes[*a];
            if x.needs_grad {
                let cols = x.value.cols();
                accumulate(grads, *a, x.value.len(), |d| {
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..cols {
                            d[src * cols + c] += g[r * cols + c];
                        }
                    }
                });
            }
        }
        Op::Transpose(a) => {
            let x = &nodes[*a];
            if x.needs_grad {
                let (r, c) = x.value.shape();
                accumulate(grads, *a, r * c, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.with_value(self.id, Tensor::shape)
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    /// Copy of the current value.
    pub fn value(&self) -> Tensor {
        self.tape.with_value(self.id, Tensor::clone)
    }

    pub fn item(&self) -> f64 {
        self.tape.with_value(self.id, |t| t.data()[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let nodes = tape.nodes.borrow();
        let (x, y) = (&nodes[self.id], &nodes[rhs.id]);
        let ((m, k), (k2, n)) = (x.value.shape(), y.value.shape());
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: (m, k),
                right: (k2, n),
            });
        }
        let mut out = Tensor::zeros(m, n);
        gemm(
            m,
            k,
            n,
            x.value.data(),
            (k as isize, 1),
            y.value.data(),
            (n as isize, 1),
            out.data_mut(),
            0.0,
        );
        let needs = x.needs_grad || y.needs_grad;
        drop(nodes);
        Ok(tape.push(out, Op::MatMul(self.id, rhs.id), needs))
    }

    /// Elementwise sum; `rhs` may broadcast as a row (1×n), column (m×1) or scalar.
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Binary::Add, self, rhs, "add")
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Binary::Sub, self, rhs, "sub")
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(Binary::Mul, self, rhs, "mul")
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let value = self.tape.with_value(self.id, |t| t.map(|v| v * s));
        let needs = self.requires_grad();
        self.tape.push(value, Op::Scale(self.id, s), needs)
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(Unary::Exp, self)
    }

    pub fn log(self) -> Var<'t> {
        self.tape.unary(Unary::Log, self)
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(Unary::Tanh, self)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.tape.unary(Unary::LeakyRelu(slope), self)
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(Unary::Square, self)
    }

    /// Clamp into `[lo, hi]`; the gradient vanishes outside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.tape.unary(Unary::Clamp(lo, hi), self)
    }

    pub fn sum(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |t| Tensor::scalar(t.data().iter().sum()));
        let needs = self.requires_grad();
        self.tape.push(value, Op::Sum(self.id), needs)
    }

    pub fn mean(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |t| {
            Tensor::scalar(t.data().iter().sum::<f64>() / t.len().max(1) as f64)
        });
        let needs = self.requires_grad();
        self.tape.push(value, Op::Mean(self.id), needs)
    }

    /// Sum of each row, giving an m×1 column.
    pub fn row_sum(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |t| {
            Tensor::column(t.iter_rows().map(|r| r.iter().sum()).collect())
        });
        let needs = self.requires_grad();
        self.tape.push(value, Op::RowSum(self.id), needs)
    }

    /// Concatenation along the last axis.
    pub fn concat(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let nodes = tape.nodes.borrow();
        let (x, y) = (&nodes[self.id].value, &nodes[rhs.id].value);
        if x.rows() != y.rows() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let cols = x.cols() + y.cols();
        let mut data = Vec::with_capacity(x.rows() * cols);
        for r in 0..x.rows() {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(y.row(r));
        }
        let value = Tensor::new(x.rows(), cols, data)?;
        let needs = nodes[self.id].needs_grad || nodes[rhs.id].needs_grad;
        drop(nodes);
        Ok(tape.push(value, Op::Concat(self.id, rhs.id), needs))
    }

    /// Rows `start..end`.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let (rows, cols) = self.shape();
        if start > end || end > rows {
            return Err(Error::invalid(
                "slice_rows",
                format!("range {start}..{end} out of bounds for {rows} rows"),
            ));
        }
        let value = self.tape.with_value(self.id, |t| {
            Tensor::new(end - start, cols, t.data()[start * cols..end * cols].to_vec())
        })?;
        let needs = self.requires_grad();
        Ok(self.tape.push(value, Op::SliceRows(self.id, start), needs))
    }

    /// Rows picked by index (repeats allowed).
    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let rows = self.rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(
                "gather_rows",
                format!("index {bad} out of bounds for {rows} rows"),
            ));
        }
        let value = self.tape.with_value(self.id, |t| t.select_rows(idx));
        let needs = self.requires_grad();
        Ok(self.tape.push(value, Op::Gather(self.id, idx.to_vec()), needs))
    }

    pub fn transpose(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, Tensor::transpose);
        let needs = self.requires_grad();
        self.tape.push(value, Op::Transpose(self.id), needs)
    }
}

/// Adjoints of the leaves of one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        self.by_id(var.id)
    }

    fn by_id(&self, id: usize) -> Option<Tensor> {
        let g = self.grads.get(id)?.as_ref()?;
        let (r, c) = self.shapes[id];
        Tensor::new(r, c, g.clone()).ok()
    }
}

/// Named parameter gradients extracted from a tape.
#[derive(Debug, Clone, Default)]
pub struct ParamGrads(pub BTreeMap<String, Tensor>);

impl ParamGrads {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_zero_has_unit_grad() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 3));
        let y = x.exp();
        assert_eq!(y.value().data(), &[1.0; 6]);
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let g = tape.backward(x.square().sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn reused_operand_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        // x*x + x  -> 2x + 1
        let y = x.mul(x).unwrap().add(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 7.0);
    }

    #[test]
    fn unused_leaf_gets_exact_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let w = tape.leaf(Tensor::full(2, 2, 5.0));
        let g = tape.backward(x.square()).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss((2, 2)))));
    }

    #[test]
    fn shape_error_names_op_and_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(2, 3));
        let err = a.matmul(b).unwrap_err();
        assert_eq!(err.to_string(), "matmul: shape mismatch (2, 3) vs (2, 3)");
        let c = tape.leaf(Tensor::zeros(3, 2));
        assert!(matches!(a.add(c), Err(Error::ShapeMismatch { op: "add", .. })));
    }

    #[test]
    fn broadcast_row_and_column() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let row = tape.leaf(Tensor::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let col = tape.leaf(Tensor::column(vec![10.0, 20.0]));
        let y = a.add(row).unwrap().add(col).unwrap();
        assert_eq!(y.value().data(), &[11.0, 12.0, 13.0, 21.0, 22.0, 23.0]);
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.get(row).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.get(col).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn operands_are_not_mutated() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, 2, vec![1.0, -2.0]).unwrap());
        let before = x.value();
        let _ = x.square().exp().leaky_relu(0.1).scale(3.0).sum();
        assert_eq!(x.value(), before);
    }
}
