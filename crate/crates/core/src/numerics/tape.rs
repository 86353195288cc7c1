//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is an append-only list of nodes. Every operation on a [`Var`]
//! evaluates eagerly and appends a node recording its inputs; [`Tape::backward`]
//! walks the list once in reverse and accumulates adjoints into the leaves.
//! Tapes are rebuilt for every forward pass and are confined to one thread.

use std::cell::RefCell;

use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into, Tensor};
use super::NumericsError;

type Result<T> = std::result::Result<T, NumericsError>;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Maximum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Neg,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Softplus,
    Abs,
    Square,
    MaxScalar(f64),
    Clamp(f64, f64),
    Scale(f64),
    AddScalar(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Binary(Binary, usize, usize),
    Unary(Unary, usize),
    MatMul(usize, usize),
    Reshape(usize),
    SumAll(usize),
    MeanAll(usize),
    SumLastAxis(usize),
    ConcatLast(Vec<usize>),
    SliceLast { input: usize, start: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Binary(b, ..) => match b {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
                Binary::Div => "div",
                Binary::Maximum => "maximum",
            },
            Op::Unary(u, _) => match u {
                Unary::Neg => "neg",
                Unary::Exp => "exp",
                Unary::Log => "log",
                Unary::Sigmoid => "sigmoid",
                Unary::Tanh => "tanh",
                Unary::Softplus => "softplus",
                Unary::Abs => "abs",
                Unary::Square => "square",
                Unary::MaxScalar(_) => "max_scalar",
                Unary::Clamp(..) => "clamp",
                Unary::Scale(_) => "scale",
                Unary::AddScalar(_) => "add_scalar",
            },
            Op::MatMul(..) => "matmul",
            Op::Reshape(_) => "reshape",
            Op::SumAll(_) => "sum",
            Op::MeanAll(_) => "mean",
            Op::SumLastAxis(_) => "sum_last_axis",
            Op::ConcatLast(_) => "concat",
            Op::SliceLast { .. } => "slice",
        }
    }

    #[cfg(debug_assertions)]
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Binary(_, a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Unary(_, a)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::SumLastAxis(a)
            | Op::SliceLast { input: a, .. } => vec![*a],
            Op::ConcatLast(ids) => ids.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Append-only computation record.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    leaf_grads: RefCell<Vec<Option<Vec<f64>>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input. Its gradient is accumulated by [`Tape::backward`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        #[cfg(debug_assertions)]
        {
            let nodes = self.nodes.borrow();
            let inputs = op.inputs();
            let inputs_finite = inputs.iter().all(|&i| nodes[i].value.all_finite());
            debug_assert!(
                inputs.is_empty() || !inputs_finite || value.all_finite(),
                "{} produced a non-finite value from finite inputs",
                op.name()
            );
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, op, tracked });
        self.leaf_grads.borrow_mut().push(None);
        Var { tape: self, id }
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let shape = self.nodes.borrow()[var.id].value.shape().to_vec();
        self.leaf_grads.borrow()[var.id]
            .as_ref()
            .map(|g| Tensor::from_parts(shape, g.clone()))
    }

    /// Clears every leaf gradient.
    pub fn zero_grad(&self) {
        for g in self.leaf_grads.borrow_mut().iter_mut() {
            *g = None;
        }
    }

    /// Reverse sweep from a scalar root. Leaf gradients are added to whatever
    /// is already accumulated, so calling this twice without
    /// [`Tape::zero_grad`] doubles them.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.id];
        if root_node.value.len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_node.value.shape()
            )));
        }
        if !root_node.tracked {
            return Err(NumericsError::Contract(
                "backward root does not depend on any leaf".into(),
            ));
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        adj[root.id] = Some(vec![1.0]);
        let mut leaf_grads = self.leaf_grads.borrow_mut();

        for id in (0..=root.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Constant => {}
                Op::Leaf => match &mut leaf_grads[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                },
                Op::Binary(kind, a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let out_shape = node.value.shape();
                    let mut ga = nodes[*a].tracked.then(|| vec![0.0; va.len()]);
                    let mut gb = nodes[*b].tracked.then(|| vec![0.0; vb.len()]);
                    let (da, db) = (va.data(), vb.data());
                    let y = node.value.data();
                    for_each_broadcast(out_shape, va.shape(), vb.shape(), |o, ia, ib| {
                        let go = g[o];
                        let (pa, pb) = match kind {
                            Binary::Add => (go, go),
                            Binary::Sub => (go, -go),
                            Binary::Mul => (go * db[ib], go * da[ia]),
                            Binary::Div => (go / db[ib], -go * y[o] / db[ib]),
                            Binary::Maximum => {
                                if da[ia] >= db[ib] {
                                    (go, 0.0)
                                } else {
                                    (0.0, go)
                                }
                            }
                        };
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += pa;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] += pb;
                        }
                    });
                    if let Some(ga) = ga {
                        accumulate(&mut adj[*a], ga);
                    }
                    if let Some(gb) = gb {
                        accumulate(&mut adj[*b], gb);
                    }
                }
                Op::Unary(kind, a) => {
                    if !nodes[*a].tracked {
                        continue;
                    }
                    let x = nodes[*a].value.data();
                    let y = node.value.data();
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(&go, (&xi, &yi))| go * unary_derivative(*kind, xi, yi))
                        .collect();
                    accumulate(&mut adj[*a], ga);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let (m, k) = (va.shape()[0], va.shape()[1]);
                    let n = vb.shape()[1];
                    if nodes[*a].tracked {
                        let mut ga = vec![0.0; m * k];
                        matmul_bt_into(&g, vb.data(), &mut ga, m, n, k);
                        accumulate(&mut adj[*a], ga);
                    }
                    if nodes[*b].tracked {
                        let mut gb = vec![0.0; k * n];
                        matmul_at_into(va.data(), &g, &mut gb, m, k, n);
                        accumulate(&mut adj[*b], gb);
                    }
                }
                Op::Reshape(a) => {
                    if nodes[*a].tracked {
                        accumulate(&mut adj[*a], g);
                    }
                }
                Op::SumAll(a) => {
                    if nodes[*a].tracked {
                        let n = nodes[*a].value.len();
                        accumulate(&mut adj[*a], vec![g[0]; n]);
                    }
                }
                Op::MeanAll(a) => {
                    if nodes[*a].tracked {
                        let n = nodes[*a].value.len();
                        accumulate(&mut adj[*a], vec![g[0] / n as f64; n]);
                    }
                }
                Op::SumLastAxis(a) => {
                    if nodes[*a].tracked {
                        let va = &nodes[*a].value;
                        let last = *va.shape().last().unwrap_or(&1);
                        let ga: Vec<f64> = (0..va.len()).map(|i| g[i / last]).collect();
                        accumulate(&mut adj[*a], ga);
                    }
                }
                Op::ConcatLast(ids) => {
                    let widths: Vec<usize> = ids
                        .iter()
                        .map(|&i| *nodes[i].value.shape().last().unwrap_or(&1))
                        .collect();
                    let total: usize = widths.iter().sum();
                    let rows = g.len() / total.max(1);
                    let mut offset = 0;
                    for (&input, &w) in ids.iter().zip(&widths) {
                        if nodes[input].tracked {
                            let mut gi = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                gi.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                            }
                            accumulate(&mut adj[input], gi);
                        }
                        offset += w;
                    }
                }
                Op::SliceLast { input, start } => {
                    if nodes[*input].tracked {
                        let vin = &nodes[*input].value;
                        let width = *vin.shape().last().unwrap_or(&1);
                        let len = *node.value.shape().last().unwrap_or(&1);
                        let rows = vin.len() / width.max(1);
                        let mut gi = vec![0.0; vin.len()];
                        for r in 0..rows {
                            gi[r * width + start..r * width + start + len]
                                .copy_from_slice(&g[r * len..(r + 1) * len]);
                        }
                        accumulate(&mut adj[*input], gi);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn unary_forward(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Neg => -x,
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Sigmoid => sigmoid(x),
        Unary::Tanh => x.tanh(),
        Unary::Softplus => softplus(x),
        Unary::Abs => x.abs(),
        Unary::Square => x * x,
        Unary::MaxScalar(c) => x.max(c),
        Unary::Clamp(lo, hi) => x.clamp(lo, hi),
        Unary::Scale(c) => x * c,
        Unary::AddScalar(c) => x + c,
    }
}

/// dy/dx given input `x` and output `y`.
fn unary_derivative(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Neg => -1.0,
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Tanh => 1.0 - y * y,
        Unary::Softplus => sigmoid(x),
        Unary::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Unary::Square => 2.0 * x,
        Unary::MaxScalar(c) => {
            if x >= c {
                1.0
            } else {
                0.0
            }
        }
        Unary::Clamp(lo, hi) => {
            if x >= lo && x <= hi {
                1.0
            } else {
                0.0
            }
        }
        Unary::Scale(c) => c,
        Unary::AddScalar(_) => 1.0,
    }
}

/// Numpy-style broadcast of two shapes (right-aligned, extents equal or 1).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let nd = out.len();
    let mut strides = vec![0; nd];
    let mut stride = 1;
    for i in (0..shape.len()).rev() {
        let o = i + nd - shape.len();
        strides[o] = if shape[i] == 1 { 0 } else { stride };
        stride *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_broadcast(
    out: &[usize],
    a: &[usize],
    b: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out.iter().product();
    if a == out && b == out {
        (0..n).for_each(|i| f(i, i, i));
        return;
    }
    let a_len: usize = a.iter().product();
    let b_len: usize = b.iter().product();
    if a == out && b_len == 1 {
        (0..n).for_each(|i| f(i, i, 0));
        return;
    }
    if b == out && a_len == 1 {
        (0..n).for_each(|i| f(i, 0, i));
        return;
    }
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let nd = out.len();
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for d in (0..nd).rev() {
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

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes combined"
        );
    }

    fn binary(&self, other: &Var<'t>, kind: Binary) -> Result<Var<'t>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        let op = Op::Binary(kind, self.id, other.id);
        let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| NumericsError::Shape {
            op: op.name(),
            detail: format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()),
        })?;
        if kind == Binary::Div && b.data().iter().any(|&v| v == 0.0) {
            return Err(NumericsError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let n: usize = out_shape.iter().product();
        let mut data = vec![0.0; n];
        let (da, db) = (a.data(), b.data());
        for_each_broadcast(&out_shape, a.shape(), b.shape(), |o, ia, ib| {
            let (x, y) = (da[ia], db[ib]);
            data[o] = match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
                Binary::Maximum => {
                    if x >= y {
                        x
                    } else {
                        y
                    }
                }
            };
        });
        let tracked = self.is_tracked() || other.is_tracked();
        Ok(self.tape.push(Tensor::from_parts(out_shape, data), op, tracked))
    }

    fn unary(&self, kind: Unary) -> Var<'t> {
        let v = self.value();
        let data = v.data().iter().map(|&x| unary_forward(kind, x)).collect();
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        self.tape.push(out, Op::Unary(kind, self.id), self.is_tracked())
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Div)
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn maximum(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Maximum)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Unary::Neg)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Unary::Exp)
    }

    pub fn log(&self) -> Result<Var<'t>> {
        if self.value().data().iter().any(|&v| v <= 0.0) {
            return Err(NumericsError::Domain {
                op: "log",
                detail: "argument must be positive".into(),
            });
        }
        Ok(self.unary(Unary::Log))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Unary::Sigmoid)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Unary::Tanh)
    }

    pub fn softplus(&self) -> Var<'t> {
        self.unary(Unary::Softplus)
    }

    /// `log σ(x) = −softplus(−x)`.
    pub fn log_sigmoid(&self) -> Var<'t> {
        self.neg().softplus().neg()
    }

    pub fn abs(&self) -> Var<'t> {
        self.unary(Unary::Abs)
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Unary::Square)
    }

    pub fn max_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Unary::MaxScalar(c))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Unary::Clamp(lo, hi))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Unary::Scale(c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Unary::AddScalar(c))
    }

    /// `[m×k]·[k×n]`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumericsError::Shape {
                op: "matmul",
                detail: format!("{sa:?} · {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(a.data(), b.data(), &mut out, m, k, n);
        let tracked = self.is_tracked() || other.is_tracked();
        Ok(self.tape.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul(self.id, other.id),
            tracked,
        ))
    }

    /// `x·W + b` for `x: [m×k]`, `W: [k×n]`, `b: [n]`.
    pub fn affine(&self, weight: &Var<'t>, bias: &Var<'t>) -> Result<Var<'t>> {
        self.matmul(weight)?.add(bias)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.tape.push(v, Op::Reshape(self.id), self.is_tracked()))
    }

    pub fn sum(&self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.tape.push(v, Op::SumAll(self.id), self.is_tracked())
    }

    pub fn mean(&self) -> Var<'t> {
        let t = self.value();
        let v = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        self.tape.push(v, Op::MeanAll(self.id), self.is_tracked())
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_last_axis(&self) -> Var<'t> {
        let t = self.value();
        let shape = t.shape();
        let last = *shape.last().unwrap_or(&1);
        let out_shape = shape[..shape.len().saturating_sub(1)].to_vec();
        let data = t.data().chunks(last.max(1)).map(|c| c.iter().sum()).collect();
        self.tape.push(
            Tensor::from_parts(out_shape, data),
            Op::SumLastAxis(self.id),
            self.is_tracked(),
        )
    }

    /// Concatenates along the last axis; leading extents must agree.
    pub fn concat_last(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| NumericsError::Shape {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let values: Vec<Tensor> = parts
            .iter()
            .map(|p| {
                first.same_tape(p);
                p.value()
            })
            .collect();
        let lead = &values[0].shape()[..values[0].ndim().saturating_sub(1)];
        if values
            .iter()
            .any(|v| v.ndim() == 0 || &v.shape()[..v.ndim() - 1] != lead)
        {
            return Err(NumericsError::Shape {
                op: "concat",
                detail: format!(
                    "leading extents differ: {:?}",
                    values.iter().map(|v| v.shape().to_vec()).collect::<Vec<_>>()
                ),
            });
        }
        let widths: Vec<usize> = values.iter().map(|v| *v.shape().last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let tracked = parts.iter().any(|p| p.is_tracked());
        Ok(first.tape.push(
            Tensor::from_parts(shape, data),
            Op::ConcatLast(parts.iter().map(|p| p.id).collect()),
            tracked,
        ))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let t = self.value();
        let shape = t.shape();
        let width = *shape.last().ok_or_else(|| NumericsError::Shape {
            op: "slice",
            detail: "scalar input".into(),
        })?;
        if start + len > width {
            return Err(NumericsError::Shape {
                op: "slice",
                detail: format!("{start}..{} out of last extent {width}", start + len),
            });
        }
        let rows = t.len() / width.max(1);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * width + start..r * width + start + len]);
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = len;
        Ok(self.tape.push(
            Tensor::from_parts(out_shape, data),
            Op::SliceLast {
                input: self.id,
                start,
            },
            self.is_tracked(),
        ))
    }
}
