use super::Tensor;
use crate::error::{Error, Result};

/// Index of a node in a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Minimum(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRow(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Map(NodeId, fn(f64) -> f64),
    Clamp(NodeId, f64, f64),
    Sum(NodeId),
    Mean(NodeId),
    RowSum(NodeId),
    Softmax(NodeId),
    MaskedSoftmax(NodeId),
    LogSoftmax(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Pick(NodeId, Vec<usize>),
    Reshape(NodeId),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Minimum(..) => "minimum",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Map(..) => "map",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row_sum",
            Op::Softmax(..) => "softmax",
            Op::MaskedSoftmax(..) => "masked_softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::Pick(..) => "pick",
            Op::Reshape(..) => "reshape",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Minimum(a, b) => vec![*a, *b],
            Op::AddRow(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Map(a, _)
            | Op::Clamp(a, ..)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSum(a)
            | Op::Softmax(a)
            | Op::MaskedSoftmax(a)
            | Op::LogSoftmax(a)
            | Op::SliceCols(a, _)
            | Op::Pick(a, _)
            | Op::Reshape(a) => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatCols(xs) | Op::ConcatRows(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    needs_grad: bool,
}

impl Node {
    fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    fn rows(&self) -> usize {
        self.value.len() / self.cols()
    }
}

/// Append-only record of a forward pass. Node `i` only ever reads nodes
/// `< i`, so insertion order is a topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients of a scalar root, produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`, or `None` when `id` does
    /// not influence the root through any differentiable path.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn softmax_row(x: &[f64], out: &mut [f64], mask: Option<&[bool]>) {
    let allowed = |j: usize| mask.is_none_or(|m| m[j]);
    let max = x
        .iter()
        .enumerate()
        .filter(|(j, _)| allowed(*j))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (j, (o, &v)) in out.iter_mut().zip(x).enumerate() {
        *o = if allowed(j) { (v - max).exp() } else { 0.0 };
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

fn add_into(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => g.iter_mut().zip(delta).for_each(|(g, d)| *g += d),
        None => *slot = Some(delta.to_vec()),
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Copies a node's value out as a standalone tensor.
    pub fn tensor(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id.0];
        Tensor::new(&n.shape, n.value.clone()).expect("graph shapes are valid")
    }

    /// Name of the operation that produced `id`.
    pub fn op_kind(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.kind()
    }

    /// Input node ids of `id`, all strictly smaller than `id`.
    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.inputs()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> NodeId {
        let inputs = op.inputs();
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        debug_assert!(
            value.iter().all(|v| v.is_finite())
                || inputs
                    .iter()
                    .any(|i| self.nodes[i.0].value.iter().any(|v| !v.is_finite())),
            "{} produced a non-finite value from finite inputs",
            op.kind()
        );
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            shape,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a tensor as a leaf. Gradients are tracked iff the tensor
    /// has `requires_grad` set.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            needs_grad: t.requires_grad(),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf without gradient tracking.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<NodeId> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    /// Leaf with gradient tracking.
    pub fn variable(&mut self, shape: &[usize], data: Vec<f64>) -> Result<NodeId> {
        let t = Tensor::new(shape, data)?.with_grad();
        Ok(self.leaf(&t))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if self.nodes[a.0].value.len() != self.nodes[b.0].value.len()
            || self.nodes[a.0].cols() != self.nodes[b.0].cols()
        {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(sa.clone())
    }

    fn zip_with(
        &mut self,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        let shape = self.same_shape(op.kind(), a, b)?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(op, shape, value))
    }

    fn map_with(&mut self, op: Op, a: NodeId, f: impl Fn(f64) -> f64) -> NodeId {
        let shape = self.nodes[a.0].shape.clone();
        let value = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(op, shape, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(Op::Minimum(a, b), a, b, f64::min)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map_with(Op::Scale(a, c), a, |x| x * c)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    /// `x[m×n] + b[n]`, broadcasting the bias over rows.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let n = self.nodes[x.0].cols();
        if self.nodes[bias.0].value.len() != n {
            return Err(Error::dim(
                "add_row",
                &self.nodes[x.0].shape,
                &self.nodes[bias.0].shape,
            ));
        }
        let b = &self.nodes[bias.0].value;
        let value = self.nodes[x.0]
            .value
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(x, b)| x + b))
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push(Op::AddRow(x, bias), shape, value))
    }

    /// Matrix product `a[m×k] · b[k×n]`. One-dimensional operands are
    /// treated as row vectors.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        let (m, k) = (na.rows(), na.cols());
        let (k2, n) = (nb.rows(), nb.cols());
        if k != k2 || na.shape.len() > 2 || nb.shape.len() > 2 {
            return Err(Error::dim("matmul", &na.shape, &nb.shape));
        }
        let value = matmul_raw(&na.value, &nb.value, m, k, n);
        Ok(self.push(Op::MatMul(a, b), vec![m, n], value))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let node = &self.nodes[a.0];
        let (m, n) = (node.rows(), node.cols());
        let value = transpose_raw(&node.value, m, n);
        self.push(Op::Transpose(a), vec![n, m], value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map_with(Op::Relu(a), a, |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map_with(Op::Tanh(a), a, f64::tanh)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map_with(Op::Exp(a), a, f64::exp)
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(bad) = self.nodes[a.0]
            .value
            .iter()
            .find(|&&v| v.is_nan() || v <= 0.0)
        {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.map_with(Op::Log(a), a, f64::ln))
    }

    /// Elementwise user function with its derivative `deriv(x)` supplied
    /// by the caller.
    pub fn map(&mut self, a: NodeId, f: fn(f64) -> f64, deriv: fn(f64) -> f64) -> NodeId {
        self.map_with(Op::Map(a, deriv), a, f)
    }

    /// Clamp into `[lo, hi]`; the gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.map_with(Op::Clamp(a, lo, hi), a, |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(Op::Sum(a), vec![1], vec![s])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(a), vec![1], vec![s])
    }

    /// Sum along the last axis: `[m×n] -> [m×1]`.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let node = &self.nodes[a.0];
        let value: Vec<f64> = node
            .value
            .chunks(node.cols())
            .map(|r| r.iter().sum())
            .collect();
        let m = value.len();
        self.push(Op::RowSum(a), vec![m, 1], value)
    }

    /// Softmax along the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let node = &self.nodes[a.0];
        let n = node.cols();
        let mut value = vec![0.0; node.value.len()];
        for (x, out) in node.value.chunks(n).zip(value.chunks_mut(n)) {
            softmax_row(x, out, None);
        }
        let shape = node.shape.clone();
        self.push(Op::Softmax(a), shape, value)
    }

    /// Softmax along the last axis where columns with `valid[j] == false`
    /// get exactly zero weight.
    pub fn masked_softmax(&mut self, a: NodeId, valid: &[bool]) -> Result<NodeId> {
        let node = &self.nodes[a.0];
        let n = node.cols();
        if valid.len() != n {
            return Err(Error::dim("masked_softmax", &node.shape, &[valid.len()]));
        }
        if !valid.iter().any(|&v| v) {
            return Err(Error::usage("masked_softmax: every position is masked"));
        }
        let mut value = vec![0.0; node.value.len()];
        for (x, out) in node.value.chunks(n).zip(value.chunks_mut(n)) {
            softmax_row(x, out, Some(valid));
        }
        let shape = node.shape.clone();
        Ok(self.push(Op::MaskedSoftmax(a), shape, value))
    }

    /// `x - logsumexp(x)` along the last axis.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let node = &self.nodes[a.0];
        let n = node.cols();
        let mut value = Vec::with_capacity(node.value.len());
        for x in node.value.chunks(n) {
            let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            value.extend(x.iter().map(|v| v - lse));
        }
        let shape = node.shape.clone();
        self.push(Op::LogSoftmax(a), shape, value)
    }

    /// Per-row normalization to zero mean and unit variance (population
    /// variance plus [`LAYER_NORM_EPS`]) followed by `gain * x + bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let d = self.nodes[x.0].cols();
        if self.nodes[gain.0].value.len() != d || self.nodes[bias.0].value.len() != d {
            return Err(Error::dim(
                "layer_norm",
                &self.nodes[x.0].shape,
                &self.nodes[gain.0].shape,
            ));
        }
        let xs = &self.nodes[x.0].value;
        let (g, b) = (&self.nodes[gain.0].value, &self.nodes[bias.0].value);
        let mut xhat = Vec::with_capacity(xs.len());
        let mut inv_std = Vec::with_capacity(xs.len() / d);
        let mut value = Vec::with_capacity(xs.len());
        for row in xs.chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat.push(h);
                value.push(h * g[j] + b[j]);
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            shape,
            value,
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let node = &self.nodes[a.0];
        let n = node.cols();
        if len == 0 || start + len > n {
            return Err(Error::dim("slice_cols", &node.shape, &[start, len]));
        }
        let value = node
            .value
            .chunks(n)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let m = node.rows();
        Ok(self.push(Op::SliceCols(a, start), vec![m, len], value))
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::usage("concat_cols of nothing"))?;
        let m = self.nodes[first.0].rows();
        for p in parts {
            if self.nodes[p.0].rows() != m {
                return Err(Error::dim(
                    "concat_cols",
                    &self.nodes[first.0].shape,
                    &self.nodes[p.0].shape,
                ));
            }
        }
        let n: usize = parts.iter().map(|p| self.nodes[p.0].cols()).sum();
        let mut value = Vec::with_capacity(m * n);
        for i in 0..m {
            for p in parts {
                let node = &self.nodes[p.0];
                let c = node.cols();
                value.extend_from_slice(&node.value[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), vec![m, n], value))
    }

    /// Vertical stacking of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::usage("concat_rows of nothing"))?;
        let n = self.nodes[first.0].cols();
        let mut value = Vec::new();
        for p in parts {
            let node = &self.nodes[p.0];
            if node.cols() != n {
                return Err(Error::dim(
                    "concat_rows",
                    &self.nodes[first.0].shape,
                    &node.shape,
                ));
            }
            value.extend_from_slice(&node.value);
        }
        let m = value.len() / n;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), vec![m, n], value))
    }

    /// Selects column `idx[i]` from row `i`: `[m×n] -> [m×1]`.
    pub fn pick(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let node = &self.nodes[a.0];
        let n = node.cols();
        if idx.len() != node.rows() || idx.iter().any(|&j| j >= n) {
            return Err(Error::dim("pick", &node.shape, &[idx.len()]));
        }
        let value = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| node.value[i * n + j])
            .collect();
        Ok(self.push(Op::Pick(a, idx.to_vec()), vec![idx.len(), 1], value))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let node = &self.nodes[a.0];
        if shape.is_empty() || shape.iter().product::<usize>() != node.value.len() {
            return Err(Error::dim("reshape", &node.shape, shape));
        }
        let value = node.value.clone();
        Ok(self.push(Op::Reshape(a), shape.to_vec(), value))
    }

    /// Reverse sweep from a scalar root. Fan-out contributions are summed.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_node = self
            .nodes
            .get(root.0)
            .ok_or_else(|| Error::usage("backward: root is not a node of this graph"))?;
        if root_node.value.len() != 1 {
            return Err(Error::usage(format!(
                "backward: root must be scalar, got shape {:?}",
                root_node.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let wants = |id: &NodeId| self.nodes[id.0].needs_grad;
        let val = |id: &NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(a) {
                    add_into(&mut grads[a.0], g);
                }
                if wants(b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    add_into(&mut grads[a.0], g);
                }
                if wants(b) {
                    let d: Vec<f64> = g.iter().map(|v| -v).collect();
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    let d: Vec<f64> = g.iter().zip(val(b)).map(|(g, y)| g * y).collect();
                    add_into(&mut grads[a.0], &d);
                }
                if wants(b) {
                    let d: Vec<f64> = g.iter().zip(val(a)).map(|(g, x)| g * x).collect();
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::Minimum(a, b) => {
                let (xa, xb) = (val(a), val(b));
                if wants(a) {
                    let d: Vec<f64> = (0..g.len())
                        .map(|i| if xa[i] <= xb[i] { g[i] } else { 0.0 })
                        .collect();
                    add_into(&mut grads[a.0], &d);
                }
                if wants(b) {
                    let d: Vec<f64> = (0..g.len())
                        .map(|i| if xa[i] <= xb[i] { 0.0 } else { g[i] })
                        .collect();
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::Scale(a, c) => {
                let d: Vec<f64> = g.iter().map(|v| v * c).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::AddRow(x, bias) => {
                if wants(x) {
                    add_into(&mut grads[x.0], g);
                }
                if wants(bias) {
                    let n = node.cols();
                    let mut d = vec![0.0; n];
                    for row in g.chunks(n) {
                        d.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    add_into(&mut grads[bias.0], &d);
                }
            }
            Op::MatMul(a, b) => {
                let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
                let (m, k, n) = (na.rows(), na.cols(), nb.cols());
                if wants(a) {
                    let bt = transpose_raw(&nb.value, k, n);
                    let d = matmul_raw(g, &bt, m, n, k);
                    add_into(&mut grads[a.0], &d);
                }
                if wants(b) {
                    let at = transpose_raw(&na.value, m, k);
                    let d = matmul_raw(&at, g, k, m, n);
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (node.rows(), node.cols());
                let d = transpose_raw(g, m, n);
                add_into(&mut grads[a.0], &d);
            }
            Op::Relu(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(val(a))
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Tanh(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(&node.value)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Exp(a) => {
                let d: Vec<f64> = g.iter().zip(&node.value).map(|(g, y)| g * y).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Log(a) => {
                let d: Vec<f64> = g.iter().zip(val(a)).map(|(g, x)| g / x).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Map(a, deriv) => {
                let d: Vec<f64> = g.iter().zip(val(a)).map(|(g, &x)| g * deriv(x)).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Clamp(a, lo, hi) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(val(a))
                    .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                    .collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Sum(a) => {
                let d = vec![g[0]; val(a).len()];
                add_into(&mut grads[a.0], &d);
            }
            Op::Mean(a) => {
                let n = val(a).len();
                let d = vec![g[0] / n as f64; n];
                add_into(&mut grads[a.0], &d);
            }
            Op::RowSum(a) => {
                let n = self.nodes[a.0].cols();
                let d: Vec<f64> = g.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Softmax(a) | Op::MaskedSoftmax(a) => {
                let n = node.cols();
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(n).zip(node.value.chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    d.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                add_into(&mut grads[a.0], &d);
            }
            Op::LogSoftmax(a) => {
                let n = node.cols();
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(n).zip(node.value.chunks(n)) {
                    let total: f64 = gr.iter().sum();
                    d.extend(gr.iter().zip(yr).map(|(g, y)| g - y.exp() * total));
                }
                add_into(&mut grads[a.0], &d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.cols();
                let gv = val(gain);
                if wants(x) {
                    let mut dx = Vec::with_capacity(g.len());
                    for (r, (gr, hr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let dh: Vec<f64> = gr.iter().zip(gv).map(|(g, w)| g * w).collect();
                        let s1: f64 = dh.iter().sum();
                        let s2: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / d as f64;
                        dx.extend((0..d).map(|j| k * (d as f64 * dh[j] - s1 - hr[j] * s2)));
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                if wants(gain) {
                    let mut dg = vec![0.0; d];
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                    add_into(&mut grads[gain.0], &dg);
                }
                if wants(bias) {
                    let mut db = vec![0.0; d];
                    for gr in g.chunks(d) {
                        db.iter_mut().zip(gr).for_each(|(b, g)| *b += g);
                    }
                    add_into(&mut grads[bias.0], &db);
                }
            }
            Op::SliceCols(a, start) => {
                let src = &self.nodes[a.0];
                let (n, len) = (src.cols(), node.cols());
                let mut d = vec![0.0; src.value.len()];
                for (i, gr) in g.chunks(len).enumerate() {
                    d[i * n + start..i * n + start + len].copy_from_slice(gr);
                }
                add_into(&mut grads[a.0], &d);
            }
            Op::ConcatCols(parts) => {
                let n = node.cols();
                let mut offset = 0;
                for p in parts {
                    let c = self.nodes[p.0].cols();
                    if wants(p) {
                        let d: Vec<f64> = g
                            .chunks(n)
                            .flat_map(|r| r[offset..offset + c].iter().copied())
                            .collect();
                        add_into(&mut grads[p.0], &d);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    if wants(p) {
                        add_into(&mut grads[p.0], &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::Pick(a, idx) => {
                let n = self.nodes[a.0].cols();
                let mut d = vec![0.0; self.nodes[a.0].value.len()];
                for (i, &j) in idx.iter().enumerate() {
                    d[i * n + j] += g[i];
                }
                add_into(&mut grads[a.0], &d);
            }
            Op::Reshape(a) => add_into(&mut grads[a.0], g),
        }
    }
}
