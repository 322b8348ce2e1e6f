use std::collections::BTreeMap;
use std::str::FromStr;

use super::{matmul_raw, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    ScalarMul,
    Concat,
    Slice,
    GatherRows,
    Reshape,
    Relu,
    Tanh,
    Exp,
    Log,
    Sum,
    Mean,
    MaskedSoftmax,
}

impl FromStr for OpKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "matmul" => Self::MatMul,
            "add" => Self::Add,
            "sub" => Self::Sub,
            "mul" | "elementwise-mul" => Self::Mul,
            "scalar-mul" => Self::ScalarMul,
            "concat" => Self::Concat,
            "slice" => Self::Slice,
            "gather-rows" => Self::GatherRows,
            "reshape" => Self::Reshape,
            "relu" => Self::Relu,
            "tanh" => Self::Tanh,
            "exp" => Self::Exp,
            "log" => Self::Log,
            "sum" => Self::Sum,
            "mean" => Self::Mean,
            "masked-softmax" => Self::MaskedSoftmax,
            other => return Err(TensorError::UnknownOp(other.to_string())),
        })
    }
}

/// A primitive operation together with its attributes.
///
/// Binary element-wise ops (`Add`, `Sub`, `Mul`) accept a second operand that
/// is either the same shape as the first, a `1×C` row, an `R×1` column, or a
/// single value; it is broadcast against the first operand.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    MatMul,
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    GatherRows(Vec<usize>),
    Reshape(Vec<usize>),
    Relu,
    Tanh,
    Exp,
    Log,
    /// `None` reduces every element to a scalar; `Some(axis)` keeps dims.
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    /// Softmax along `axis` restricted to entries where `mask` is true.
    /// Masked entries come out as exactly zero.
    MaskedSoftmax { axis: usize, mask: Vec<bool> },
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::MatMul => OpKind::MatMul,
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::ScalarMul(_) => OpKind::ScalarMul,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::GatherRows(_) => OpKind::GatherRows,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Relu => OpKind::Relu,
            Op::Tanh => OpKind::Tanh,
            Op::Exp => OpKind::Exp,
            Op::Log => OpKind::Log,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::MaskedSoftmax { .. } => OpKind::MaskedSoftmax,
        }
    }

    fn name(&self) -> &'static str {
        match self.kind() {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "elementwise-mul",
            OpKind::ScalarMul => "scalar-mul",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::GatherRows => "gather-rows",
            OpKind::Reshape => "reshape",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::MaskedSoftmax => "masked-softmax",
        }
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    record: Option<(Op, Vec<Var>)>,
}

/// Gradients of a scalar loss with respect to every grad-tracked leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.grads.get(&leaf)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads.iter().map(|(v, t)| (*v, t))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Single-use recording of a forward computation.
///
/// Values are always stored so that inference can run through the same code
/// path; an op is only recorded for the backward pass when one of its inputs
/// tracks gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, record: Option<(Op, Vec<Var>)>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            record,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a grad-tracked leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, None)
    }

    /// Adds a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Evaluates `op` on `inputs`, recording it when any input tracks gradients.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(TensorError::Invalid(format!("var {} not on this tape", v.0)));
            }
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = forward(&op, &values)?;
        if !out.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let record = requires_grad.then(|| (op, inputs.to_vec()));
        Ok(self.push(out, requires_grad, record))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Op::ScalarMul(c), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.apply(Op::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.apply(Op::Slice { axis, start, end }, &[a])
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        self.apply(Op::GatherRows(rows), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(Op::Reshape(shape), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Relu, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Log, &[a])
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.apply(Op::Sum { axis }, &[a])
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.apply(Op::Mean { axis }, &[a])
    }

    pub fn masked_softmax(&mut self, a: Var, axis: usize, mask: Vec<bool>) -> Result<Var> {
        self.apply(Op::MaskedSoftmax { axis, mask }, &[a])
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Reverse pass from a scalar `loss`; consumes the tape.
    ///
    /// Every grad-tracked leaf gets an entry, zero-filled when the loss does
    /// not depend on it.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let Some((op, inputs)) = &node.record else {
                grads[idx] = Some(g);
                continue;
            };
            let input_values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let contributions = backward_op(op, &input_values, &node.value, &g)?;
            for (input, contribution) in inputs.iter().zip(contributions) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        let mut out = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && node.record.is_none() {
                let shape = node.value.shape().to_vec();
                let data = grads[idx].take().unwrap_or_else(|| vec![0.0; node.value.numel()]);
                out.insert(Var(idx), Tensor::new(shape, data)?);
            }
        }
        Ok(Gradients { grads: out })
    }
}

fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape {
        op,
        detail: detail.into(),
    }
}

fn expect_arity(op: &Op, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(shape_err(op.name(), format!("expected {n} inputs, got {}", inputs.len())));
    }
    Ok(())
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
    if a.shape() == b.shape() {
        return Ok(Bcast::Same);
    }
    if b.numel() == 1 {
        return Ok(Bcast::Scalar);
    }
    let (ar, ac) = a.dims2()?;
    let (br, bc) = b.dims2()?;
    if a.rank() == 2 && br == 1 && bc == ac {
        Ok(Bcast::Row)
    } else if a.rank() == 2 && bc == 1 && br == ar {
        Ok(Bcast::Col)
    } else {
        Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

#[inline]
fn bcast_index(kind: Bcast, i: usize, cols: usize) -> usize {
    match kind {
        Bcast::Same => i,
        Bcast::Row => i % cols,
        Bcast::Col => i / cols,
        Bcast::Scalar => 0,
    }
}

fn reduce_to(kind: Bcast, g: &[f64], cols: usize, len: usize) -> Vec<f64> {
    if kind == Bcast::Same {
        return g.to_vec();
    }
    let mut out = vec![0.0; len];
    for (i, &v) in g.iter().enumerate() {
        out[bcast_index(kind, i, cols)] += v;
    }
    out
}

/// Iterates softmax lanes: returns (number of lanes, lane length, index fn).
fn lanes(t: &Tensor, axis: usize) -> Result<(usize, usize, impl Fn(usize, usize) -> usize)> {
    let (r, c) = t.dims2()?;
    let along_rows = match (t.rank(), axis) {
        (0 | 1, 0) => true,
        (2, 1) => true,
        (2, 0) => false,
        _ => return Err(shape_err("masked-softmax", format!("axis {axis} for shape {:?}", t.shape()))),
    };
    Ok(if along_rows {
        (r, c, Box::new(move |lane: usize, k: usize| lane * c + k) as Box<dyn Fn(usize, usize) -> usize>)
    } else {
        (c, r, Box::new(move |lane: usize, k: usize| k * c + lane) as Box<dyn Fn(usize, usize) -> usize>)
    })
}

fn reduce_shape(t: &Tensor, axis: Option<usize>, op: &'static str) -> Result<(Vec<usize>, usize)> {
    let (r, c) = t.dims2()?;
    match axis {
        None => Ok((Vec::new(), t.numel())),
        Some(0) => Ok((vec![1, c], r)),
        Some(1) => Ok((vec![r, 1], c)),
        Some(a) => Err(shape_err(op, format!("axis {a} out of range"))),
    }
}

fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    let name = op.name();
    match op {
        Op::MatMul => {
            expect_arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 {
                return Err(shape_err(name, "operands must be matrices"));
            }
            let (m, k) = a.dims2()?;
            let (k2, n) = b.dims2()?;
            if k != k2 {
                return Err(shape_err(name, format!("{m}x{k} · {k2}x{n}")));
            }
            Tensor::matrix(m, n, matmul_raw(a.data(), b.data(), m, k, n))
        }
        Op::Add | Op::Sub | Op::Mul => {
            expect_arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            let kind = broadcast_kind(name, a, b)?;
            let cols = a.dims2()?.1;
            let bd = b.data();
            let data: Vec<f64> = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let y = bd[bcast_index(kind, i, cols)];
                    match op {
                        Op::Add => x + y,
                        Op::Sub => x - y,
                        _ => x * y,
                    }
                })
                .collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        Op::ScalarMul(c) => {
            expect_arity(op, inputs, 1)?;
            Ok(inputs[0].map(|x| c * x))
        }
        Op::Concat { axis } => {
            if inputs.is_empty() {
                return Err(shape_err(name, "no inputs"));
            }
            let dims: Vec<(usize, usize)> = inputs.iter().map(|t| t.dims2()).collect::<Result<_>>()?;
            match axis {
                0 => {
                    let cols = dims[0].1;
                    if dims.iter().any(|d| d.1 != cols) {
                        return Err(shape_err(name, "column counts differ"));
                    }
                    let rows = dims.iter().map(|d| d.0).sum();
                    let mut data = Vec::with_capacity(rows * cols);
                    for t in inputs {
                        data.extend_from_slice(t.data());
                    }
                    Tensor::matrix(rows, cols, data)
                }
                1 => {
                    let rows = dims[0].0;
                    if dims.iter().any(|d| d.0 != rows) {
                        return Err(shape_err(name, "row counts differ"));
                    }
                    let cols: usize = dims.iter().map(|d| d.1).sum();
                    let mut data = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        for (t, d) in inputs.iter().zip(&dims) {
                            data.extend_from_slice(&t.data()[r * d.1..(r + 1) * d.1]);
                        }
                    }
                    Tensor::matrix(rows, cols, data)
                }
                a => Err(shape_err(name, format!("axis {a} out of range"))),
            }
        }
        Op::Slice { axis, start, end } => {
            expect_arity(op, inputs, 1)?;
            let t = inputs[0];
            let (r, c) = t.dims2()?;
            let limit = if *axis == 0 { r } else { c };
            if *axis > 1 || start >= end || *end > limit {
                return Err(shape_err(name, format!("[{start},{end}) on axis {axis} of {r}x{c}")));
            }
            if *axis == 0 {
                Tensor::matrix(end - start, c, t.data()[start * c..end * c].to_vec())
            } else {
                let w = end - start;
                let mut data = Vec::with_capacity(r * w);
                for i in 0..r {
                    data.extend_from_slice(&t.data()[i * c + start..i * c + end]);
                }
                Tensor::matrix(r, w, data)
            }
        }
        Op::GatherRows(idx) => {
            expect_arity(op, inputs, 1)?;
            let t = inputs[0];
            if t.rank() != 2 || idx.is_empty() {
                return Err(shape_err(name, "needs a matrix and at least one index"));
            }
            let (r, c) = t.dims2()?;
            let mut data = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                if i >= r {
                    return Err(shape_err(name, format!("row {i} out of {r}")));
                }
                data.extend_from_slice(t.row(i));
            }
            Tensor::matrix(idx.len(), c, data)
        }
        Op::Reshape(shape) => {
            expect_arity(op, inputs, 1)?;
            inputs[0].reshaped(shape.clone())
        }
        Op::Relu => {
            expect_arity(op, inputs, 1)?;
            Ok(inputs[0].map(|x| x.max(0.0)))
        }
        Op::Tanh => {
            expect_arity(op, inputs, 1)?;
            Ok(inputs[0].map(f64::tanh))
        }
        Op::Exp => {
            expect_arity(op, inputs, 1)?;
            Ok(inputs[0].map(f64::exp))
        }
        Op::Log => {
            expect_arity(op, inputs, 1)?;
            Ok(inputs[0].map(f64::ln))
        }
        Op::Sum { axis } | Op::Mean { axis } => {
            expect_arity(op, inputs, 1)?;
            let t = inputs[0];
            let (shape, count) = reduce_shape(t, *axis, name)?;
            let div = if matches!(op, Op::Mean { .. }) { count as f64 } else { 1.0 };
            let (r, c) = t.dims2()?;
            let data = match axis {
                None => vec![t.data().iter().sum::<f64>() / div],
                Some(0) => (0..c).map(|j| (0..r).map(|i| t.data()[i * c + j]).sum::<f64>() / div).collect(),
                _ => (0..r).map(|i| t.row(i).iter().sum::<f64>() / div).collect(),
            };
            Tensor::new(shape, data)
        }
        Op::MaskedSoftmax { axis, mask } => {
            expect_arity(op, inputs, 1)?;
            let t = inputs[0];
            if mask.len() != t.numel() {
                return Err(shape_err(name, format!("mask has {} entries for {} values", mask.len(), t.numel())));
            }
            let (n_lanes, lane_len, at) = lanes(t, *axis)?;
            let x = t.data();
            let mut out = vec![0.0; t.numel()];
            for lane in 0..n_lanes {
                let mut max = f64::NEG_INFINITY;
                for k in 0..lane_len {
                    let i = at(lane, k);
                    if mask[i] {
                        max = max.max(x[i]);
                    }
                }
                if max == f64::NEG_INFINITY {
                    return Err(TensorError::Invalid(format!("masked-softmax lane {lane} has every entry masked")));
                }
                let mut total = 0.0;
                for k in 0..lane_len {
                    let i = at(lane, k);
                    if mask[i] {
                        let e = (x[i] - max).exp();
                        out[i] = e;
                        total += e;
                    }
                }
                for k in 0..lane_len {
                    out[at(lane, k)] /= total;
                }
            }
            Tensor::new(t.shape().to_vec(), out)
        }
    }
}

fn backward_op(op: &Op, inputs: &[&Tensor], out: &Tensor, g: &[f64]) -> Result<Vec<Vec<f64>>> {
    Ok(match op {
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = a.dims2()?;
            let n = b.dims2()?.1;
            let bt = b.transpose()?;
            let at = a.transpose()?;
            vec![matmul_raw(g, bt.data(), m, n, k), matmul_raw(at.data(), g, k, m, n)]
        }
        Op::Add | Op::Sub | Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let kind = broadcast_kind(op.name(), a, b)?;
            let cols = a.dims2()?.1;
            match op {
                Op::Add => vec![g.to_vec(), reduce_to(kind, g, cols, b.numel())],
                Op::Sub => {
                    let gb: Vec<f64> = reduce_to(kind, g, cols, b.numel()).into_iter().map(|v| -v).collect();
                    vec![g.to_vec(), gb]
                }
                _ => {
                    let bd = b.data();
                    let ga: Vec<f64> = g.iter().enumerate().map(|(i, &gi)| gi * bd[bcast_index(kind, i, cols)]).collect();
                    let gab: Vec<f64> = g.iter().zip(a.data()).map(|(gi, ai)| gi * ai).collect();
                    vec![ga, reduce_to(kind, &gab, cols, b.numel())]
                }
            }
        }
        Op::ScalarMul(c) => vec![g.iter().map(|v| c * v).collect()],
        Op::Concat { axis } => {
            let dims: Vec<(usize, usize)> = inputs.iter().map(|t| t.dims2()).collect::<Result<_>>()?;
            if *axis == 0 {
                let mut offset = 0;
                dims.iter()
                    .map(|&(r, c)| {
                        let part = g[offset..offset + r * c].to_vec();
                        offset += r * c;
                        part
                    })
                    .collect()
            } else {
                let total: usize = dims.iter().map(|d| d.1).sum();
                let mut parts: Vec<Vec<f64>> = dims.iter().map(|&(r, c)| Vec::with_capacity(r * c)).collect();
                let rows = dims[0].0;
                for r in 0..rows {
                    let mut offset = r * total;
                    for (part, d) in parts.iter_mut().zip(&dims) {
                        part.extend_from_slice(&g[offset..offset + d.1]);
                        offset += d.1;
                    }
                }
                parts
            }
        }
        Op::Slice { axis, start, end } => {
            let (r, c) = inputs[0].dims2()?;
            let mut ga = vec![0.0; r * c];
            if *axis == 0 {
                ga[start * c..end * c].copy_from_slice(g);
            } else {
                let w = end - start;
                for i in 0..r {
                    ga[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
            }
            vec![ga]
        }
        Op::GatherRows(idx) => {
            let (r, c) = inputs[0].dims2()?;
            let mut ga = vec![0.0; r * c];
            for (k, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    ga[i * c + j] += g[k * c + j];
                }
            }
            vec![ga]
        }
        Op::Reshape(_) => vec![g.to_vec()],
        Op::Relu => vec![g.iter().zip(out.data()).map(|(gi, y)| if *y > 0.0 { *gi } else { 0.0 }).collect()],
        Op::Tanh => vec![g.iter().zip(out.data()).map(|(gi, y)| gi * (1.0 - y * y)).collect()],
        Op::Exp => vec![g.iter().zip(out.data()).map(|(gi, y)| gi * y).collect()],
        Op::Log => vec![g.iter().zip(inputs[0].data()).map(|(gi, x)| gi / x).collect()],
        Op::Sum { axis } | Op::Mean { axis } => {
            let t = inputs[0];
            let (r, c) = t.dims2()?;
            let (_, count) = reduce_shape(t, *axis, op.name())?;
            let div = if matches!(op, Op::Mean { .. }) { count as f64 } else { 1.0 };
            let ga = (0..r * c)
                .map(|i| {
                    let src = match axis {
                        None => 0,
                        Some(0) => i % c,
                        _ => i / c,
                    };
                    g[src] / div
                })
                .collect();
            vec![ga]
        }
        Op::MaskedSoftmax { axis, .. } => {
            let (n_lanes, lane_len, at) = lanes(out, *axis)?;
            let y = out.data();
            let mut ga = vec![0.0; y.len()];
            for lane in 0..n_lanes {
                let dot: f64 = (0..lane_len).map(|k| at(lane, k)).map(|i| g[i] * y[i]).sum();
                for k in 0..lane_len {
                    let i = at(lane, k);
                    ga[i] = y[i] * (g[i] - dot);
                }
            }
            vec![ga]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_small() {
        let mut tape = Tape::new();
        let a = tape.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tape.constant(mat(&[&[1.0], &[1.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
        assert_eq!(tape.value(c).shape(), &[2, 1]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn masked_softmax_excludes_masked_entry() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![5.0, 5.0, 9.0]).unwrap());
        let y = tape.masked_softmax(x, 0, vec![true, true, false]).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn fully_masked_lane_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(tape.masked_softmax(x, 0, vec![false, false]).is_err());
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq, None).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let p = tape.leaf(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
        let loss = tape.sum(x, None).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.0; 4]);
        assert_eq!(grads.len(), 2);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.backward(y).unwrap_err(), TensorError::TapeConsumed);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn log_of_zero_is_non_finite_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 1.0]).unwrap());
        assert_eq!(tape.log(x).unwrap_err(), TensorError::NonFinite { op: "log" });
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        assert!(matches!(tape.matmul(a, b), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn op_kind_parsing() {
        assert_eq!("masked-softmax".parse::<OpKind>().unwrap(), OpKind::MaskedSoftmax);
        assert!(matches!("conv2d".parse::<OpKind>(), Err(TensorError::UnknownOp(_))));
    }

    #[test]
    fn row_and_column_broadcast() {
        let mut tape = Tape::new();
        let a = tape.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let row = tape.constant(mat(&[&[10.0, 20.0]]));
        let col = tape.constant(mat(&[&[2.0], &[3.0]]));
        let s = tape.add(a, row).unwrap();
        assert_eq!(tape.value(s).data(), &[11.0, 22.0, 13.0, 24.0]);
        let m = tape.mul(a, col).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 4.0, 9.0, 12.0]);
    }
}
