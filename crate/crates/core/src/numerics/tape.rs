//! Reverse-mode differentiation over a flat operation tape.
//!
//! Nodes only reference earlier nodes, so one reverse sweep in creation
//! order is a valid topological traversal. Loss-style scalars are recorded
//! as `CustomScalar` nodes whose input gradient is computed eagerly at
//! forward time (it only depends on forward values), which keeps the op
//! set closed while letting callers define their own objectives.

use crate::error::{FaaError, Result};

use super::tensor::{self, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

enum Op {
    Leaf,
    MatMul(VarId, VarId),
    Transpose(VarId),
    Add(VarId, VarId),
    Scale(VarId, f64),
    Tanh(VarId),
    /// a[m x n] + broadcast of b[1 x n] to every row.
    AddRowVec(VarId, VarId),
    ConcatRows(Vec<VarId>),
    ConcatCols(Vec<VarId>),
    SliceCols(VarId, usize, usize),
    Row(VarId, usize),
    Col(VarId, usize),
    SoftmaxRows(VarId),
    LayerNorm {
        x: VarId,
        gain: VarId,
        bias: VarId,
        eps: f64,
    },
    L2NormalizeRows(VarId),
    MeanRows(VarId),
    /// Scalar node with an eagerly computed gradient w.r.t. its input.
    CustomScalar { x: VarId, grad_x: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of primitive operations; replaying it backward yields
/// gradients for every recorded node.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by `VarId`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`, if any path reached it.
    pub fn get(&self, id: VarId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for `id`, or zeros of the given shape when unreached.
    pub fn wrt(&self, id: VarId, rows: usize, cols: usize) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(rows, cols),
        }
    }
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

    /// Drop all nodes, keeping the allocation for reuse.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> VarId {
        self.nodes.push(Node { value, op });
        VarId(self.nodes.len() - 1)
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let v = tensor::transpose(self.value(a));
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let v = tensor::scale(self.value(a), c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let x = self.value(a);
        let v = Tensor::from_raw(
            x.rows(),
            x.cols(),
            x.data().iter().map(|v| v.tanh()).collect(),
        );
        self.push(v, Op::Tanh(a))
    }

    /// Broadcast-add a 1xN row vector to every row of a.
    pub fn add_row_vec(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (x, r) = (self.value(a), self.value(b));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(FaaError::Shape(format!(
                "add_row_vec: {:?} + {:?}",
                x.shape(),
                r.shape()
            )));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(x.cols()) {
            for (d, v) in row.iter_mut().zip(r.data()) {
                *d += v;
            }
        }
        let v = Tensor::from_raw(x.rows(), x.cols(), data);
        Ok(self.push(v, Op::AddRowVec(a, b)))
    }

    pub fn concat_rows(&mut self, parts: &[VarId]) -> Result<VarId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Tensor::vstack(&tensors)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> Result<VarId> {
        let first = parts
            .first()
            .ok_or_else(|| FaaError::Shape("concat_cols of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(FaaError::Shape(format!(
                    "concat_cols row mismatch: {} vs {rows}",
                    t.rows()
                )));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let v = Tensor::from_raw(rows, cols, data);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: VarId, start: usize, len: usize) -> Result<VarId> {
        let x = self.value(a);
        if start + len > x.cols() || len == 0 {
            return Err(FaaError::Shape(format!(
                "slice_cols [{start}, {}) of {} cols",
                start + len,
                x.cols()
            )));
        }
        let mut data = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let v = Tensor::from_raw(x.rows(), len, data);
        Ok(self.push(v, Op::SliceCols(a, start, len)))
    }

    pub fn row(&mut self, a: VarId, i: usize) -> Result<VarId> {
        let x = self.value(a);
        if i >= x.rows() {
            return Err(FaaError::Shape(format!("row {i} of {} rows", x.rows())));
        }
        let v = Tensor::from_raw(1, x.cols(), x.row(i).to_vec());
        Ok(self.push(v, Op::Row(a, i)))
    }

    pub fn col(&mut self, a: VarId, j: usize) -> Result<VarId> {
        let x = self.value(a);
        if j >= x.cols() {
            return Err(FaaError::Shape(format!("col {j} of {} cols", x.cols())));
        }
        let data: Vec<f64> = (0..x.rows()).map(|r| x.at(r, j)).collect();
        let v = Tensor::from_raw(x.rows(), 1, data);
        Ok(self.push(v, Op::Col(a, j)))
    }

    pub fn softmax_rows(&mut self, a: VarId) -> VarId {
        let v = tensor::softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: VarId, gain: VarId, bias: VarId, eps: f64) -> Result<VarId> {
        let v = tensor::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(v, Op::LayerNorm { x, gain, bias, eps }))
    }

    /// Normalize each row to unit L2 norm.
    pub fn l2_normalize_rows(&mut self, a: VarId) -> VarId {
        let x = self.value(a);
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(x.cols()) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let v = Tensor::from_raw(x.rows(), x.cols(), data);
        self.push(v, Op::L2NormalizeRows(a))
    }

    /// Mean over rows: [m x n] -> [1 x n].
    pub fn mean_rows(&mut self, a: VarId) -> VarId {
        let x = self.value(a);
        let m = x.rows() as f64;
        let mut data = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (d, v) in data.iter_mut().zip(x.row(r)) {
                *d += v / m;
            }
        }
        let v = Tensor::from_raw(1, x.cols(), data);
        self.push(v, Op::MeanRows(a))
    }

    /// Record a scalar whose gradient w.r.t. `x` was computed by the caller
    /// from forward values.
    pub fn custom_scalar(&mut self, x: VarId, value: f64, grad_x: Tensor) -> Result<VarId> {
        if grad_x.shape() != self.value(x).shape() {
            return Err(FaaError::Shape(format!(
                "custom_scalar gradient shape {:?} vs input {:?}",
                grad_x.shape(),
                self.value(x).shape()
            )));
        }
        Ok(self.push(Tensor::scalar(value), Op::CustomScalar { x, grad_x }))
    }

    /// Reverse sweep from a scalar root; returns accumulated gradients for
    /// every node reached.
    pub fn backward(&self, root: VarId) -> Result<Gradients> {
        if self.value(root).shape() != (1, 1) {
            return Err(FaaError::Contract(format!(
                "backward root must be 1x1, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let bt = tensor::transpose(self.value(*b));
                    let at = tensor::transpose(self.value(*a));
                    accumulate(&mut grads, *a, &tensor::matmul(&g, &bt)?);
                    accumulate(&mut grads, *b, &tensor::matmul(&at, &g)?);
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, &tensor::transpose(&g));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, &tensor::scale(&g, *c));
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| gv * (1.0 - yv * yv))
                        .collect();
                    accumulate(&mut grads, *a, &Tensor::from_raw(y.rows(), y.cols(), data));
                }
                Op::AddRowVec(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    let mut db = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (d, v) in db.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *b, &Tensor::from_raw(1, g.cols(), db));
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(*p).rows();
                        let cols = self.value(*p).cols();
                        let mut data = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            data.extend_from_slice(g.row(offset + r));
                        }
                        accumulate(&mut grads, *p, &Tensor::from_raw(rows, cols, data));
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(*p).rows();
                        let cols = self.value(*p).cols();
                        let mut data = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        accumulate(&mut grads, *p, &Tensor::from_raw(rows, cols, data));
                        offset += cols;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let x = self.value(*a);
                    let mut da = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        for j in 0..*len {
                            da.set(r, start + j, g.at(r, j));
                        }
                    }
                    accumulate(&mut grads, *a, &da);
                }
                Op::Row(a, i) => {
                    let x = self.value(*a);
                    let mut da = Tensor::zeros(x.rows(), x.cols());
                    for j in 0..x.cols() {
                        da.set(*i, j, g.at(0, j));
                    }
                    accumulate(&mut grads, *a, &da);
                }
                Op::Col(a, j) => {
                    let x = self.value(*a);
                    let mut da = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        da.set(r, *j, g.at(r, 0));
                    }
                    accumulate(&mut grads, *a, &da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let mut da = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(gv, yv)| gv * yv).sum();
                        for j in 0..y.cols() {
                            da.set(r, j, y.at(r, j) * (g.at(r, j) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, &da);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain);
                    let d = xv.cols();
                    let df = d as f64;
                    let mut dx = Tensor::zeros(xv.rows(), d);
                    let mut dgain = vec![0.0; d];
                    let mut dbias = vec![0.0; d];
                    for r in 0..xv.rows() {
                        let row = xv.row(r);
                        let mean = row.iter().sum::<f64>() / df;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let grow = g.row(r);
                        let dxhat: Vec<f64> = grow
                            .iter()
                            .zip(gv.data())
                            .map(|(gr, ga)| gr * ga)
                            .collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / df;
                        let mean_dxhat_xhat =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / df;
                        for j in 0..d {
                            dgain[j] += grow[j] * xhat[j];
                            dbias[j] += grow[j];
                            dx.set(
                                r,
                                j,
                                inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat),
                            );
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                    accumulate(&mut grads, *gain, &Tensor::from_raw(1, d, dgain));
                    accumulate(&mut grads, *bias, &Tensor::from_raw(1, d, dbias));
                }
                Op::L2NormalizeRows(a) => {
                    let xv = self.value(*a);
                    let y = &self.nodes[idx].value;
                    let mut da = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let norm = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(gv, yv)| gv * yv).sum();
                        for j in 0..xv.cols() {
                            da.set(r, j, (g.at(r, j) - y.at(r, j) * dot) / norm);
                        }
                    }
                    accumulate(&mut grads, *a, &da);
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let m = x.rows() as f64;
                    let mut da = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        for j in 0..x.cols() {
                            da.set(r, j, g.at(0, j) / m);
                        }
                    }
                    accumulate(&mut grads, *a, &da);
                }
                Op::CustomScalar { x, grad_x } => {
                    accumulate(&mut grads, *x, &tensor::scale(grad_x, g.item()));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: VarId, delta: &Tensor) {
    match &mut grads[id.0] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(delta.clone()),
    }
}
