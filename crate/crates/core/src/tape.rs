//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! Operations are appended to a [`Tape`] in evaluation order and referred to
//! by [`Var`] handles. Because inputs always precede outputs, walking the tape
//! backwards is a valid topological order. Gradients from several consumers
//! are summed.

use std::sync::Arc;

use crate::tensor::{softmax_in_place, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Compressed sparse row matrix used for fixed propagation operators.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) outside {rows}x{cols}");
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let mut row_ptr = vec![0; rows + 1];
        for &(r, _, _) in &merged {
            row_ptr[r + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx: merged.iter().map(|t| t.1).collect(),
            values: merged.iter().map(|t| t.2).collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.cols, self.rows, &triplets)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = vec![0.0; self.rows * self.cols];
        for (r, c, v) in self.triplets() {
            out[r * self.cols + c] += v;
        }
        Tensor::from_parts(self.rows, self.cols, out)
    }

    pub fn matmul_dense(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        if self.cols != x.rows() {
            return Err(TensorError::Shape {
                op: "spmm",
                left: self.shape(),
                right: x.shape(),
            });
        }
        let n = x.cols();
        let mut out = vec![0.0; self.rows * n];
        for r in 0..self.rows {
            let out_row = &mut out[r * n..(r + 1) * n];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let w = self.values[k];
                for (o, v) in out_row.iter_mut().zip(x.row(self.col_idx[k])) {
                    *o += w * v;
                }
            }
        }
        Ok(Tensor::from_parts(self.rows, n, out))
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    ScatterRows(Var, Arc<[usize]>),
    ScaleRows(Var, Var),
    RowDot(Var, Var),
    SegmentSoftmax(Var, Arc<[usize]>),
    SpMatMul(Arc<SparseMatrix>, Var),
    Sum(Var),
    Pick(Var, usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for one backward pass. Single-writer; build a fresh
/// tape per step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records an input. Gradients are only tracked through `requires_grad` leaves.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `a + 1·bias` where `bias` is a `1 x cols` row vector; the only broadcast supported.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(shape_err("add_row_bias", x, b));
        }
        let cols = x.cols();
        let mut data = x.to_vec();
        if cols > 0 {
            for row in data.chunks_mut(cols) {
                for (v, bv) in row.iter_mut().zip(b.data()) {
                    *v += bv;
                }
            }
        }
        let value = Tensor::from_parts(x.rows(), cols, data);
        let rg = self.needs(&[a, bias]);
        Ok(self.push(value, Op::AddRowBias(a, bias), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        let rg = self.needs(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).softmax_rows();
        let rg = self.needs(&[a]);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&tensors)?;
        let rg = self.needs(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// `out[k] = a[index[k]]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, TensorError> {
        let value = self.value(a).gather_rows(&index)?;
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::GatherRows(a, index), rg))
    }

    /// `out[index[k]] += a[k]` into a zero tensor with `rows` rows.
    pub fn scatter_rows(
        &mut self,
        a: Var,
        index: Arc<[usize]>,
        rows: usize,
    ) -> Result<Var, TensorError> {
        let x = self.value(a);
        if index.len() != x.rows() {
            return Err(TensorError::Shape {
                op: "scatter_rows",
                left: x.shape(),
                right: (index.len(), rows),
            });
        }
        let cols = x.cols();
        let mut data = vec![0.0; rows * cols];
        for (k, &dst) in index.iter().enumerate() {
            if dst >= rows {
                return Err(TensorError::Index {
                    index: dst,
                    len: rows,
                });
            }
            for (o, v) in data[dst * cols..(dst + 1) * cols].iter_mut().zip(x.row(k)) {
                *o += v;
            }
        }
        let value = Tensor::from_parts(rows, cols, data);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::ScatterRows(a, index), rg))
    }

    /// Multiplies row `r` of `a` by `weights[r]`; `weights` is a column vector.
    pub fn scale_rows(&mut self, a: Var, weights: Var) -> Result<Var, TensorError> {
        let (x, w) = (self.value(a), self.value(weights));
        if w.cols() != 1 || w.rows() != x.rows() {
            return Err(shape_err("scale_rows", x, w));
        }
        let cols = x.cols();
        let mut data = x.to_vec();
        if cols > 0 {
            for (row, &wv) in data.chunks_mut(cols).zip(w.data()) {
                row.iter_mut().for_each(|v| *v *= wv);
            }
        }
        let value = Tensor::from_parts(x.rows(), cols, data);
        let rg = self.needs(&[a, weights]);
        Ok(self.push(value, Op::ScaleRows(a, weights), rg))
    }

    /// Row-wise inner products as a column vector.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("row_dot", x, y));
        }
        let data = (0..x.rows())
            .map(|r| x.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum())
            .collect();
        let value = Tensor::from_parts(x.rows(), 1, data);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::RowDot(a, b), rg))
    }

    /// Softmax of a column vector within groups: entries sharing `segment[r]`
    /// are normalised together.
    pub fn segment_softmax(&mut self, a: Var, segment: Arc<[usize]>) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.cols() != 1 || segment.len() != x.rows() {
            return Err(TensorError::Shape {
                op: "segment_softmax",
                left: x.shape(),
                right: (segment.len(), 1),
            });
        }
        let value = segment_softmax_values(x.data(), &segment);
        let value = Tensor::from_parts(x.rows(), 1, value);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::SegmentSoftmax(a, segment), rg))
    }

    /// Product with a fixed sparse operator. The transpose is passed in so
    /// that repeated use does not rebuild it.
    pub fn sparse_matmul(
        &mut self,
        matrix: Arc<SparseMatrix>,
        transpose: Arc<SparseMatrix>,
        a: Var,
    ) -> Result<Var, TensorError> {
        let value = matrix.matmul_dense(self.value(a))?;
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::SpMatMul(transpose, a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.needs(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Selects a single element as a 1x1 tensor.
    pub fn pick(&mut self, a: Var, row: usize, col: usize) -> Result<Var, TensorError> {
        let x = self.value(a);
        if row >= x.rows() || col >= x.cols() {
            return Err(TensorError::Index {
                index: row * x.cols().max(1) + col,
                len: x.len(),
            });
        }
        let value = Tensor::scalar(x.get(row, col));
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Pick(a, row, col), rg))
    }

    /// Back-propagates from a scalar `loss`. Every `requires_grad` node gets a
    /// gradient of its own shape, zero when it does not reach the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(TensorError::NotScalar {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let out = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                if !node.requires_grad {
                    return None;
                }
                let (r, c) = node.value.shape();
                Some(match grads.get_mut(i).and_then(Option::take) {
                    Some(g) => Tensor::from_parts(r, c, g),
                    None => Tensor::zeros(r, c),
                })
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing
                .iter_mut()
                .zip(contribution)
                .for_each(|(e, c)| *e += c),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn accumulate_with(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        f: impl FnOnce(&mut [f64]),
    ) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (rows, cols) = node.value.shape();
        let gt = || Tensor::from_parts(rows, cols, g.to_vec());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let ga = gt().matmul(&bv.transpose()).expect("matmul grad shape");
                    self.accumulate(grads, *a, ga.to_vec());
                }
                if self.requires_grad(*b) {
                    let gb = av.transpose().matmul(&gt()).expect("matmul grad shape");
                    self.accumulate(grads, *b, gb.to_vec());
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let ga = g.iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = g.iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddRowBias(a, bias) => {
                self.accumulate(grads, *a, g.to_vec());
                if self.requires_grad(*bias) {
                    self.accumulate(grads, *bias, gt().column_sums().to_vec());
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let ga = g
                    .iter()
                    .zip(av.data())
                    .map(|(x, &y)| if y > 0.0 { *x } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, ga);
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, g.iter().map(|v| v * s).collect());
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let mut ga = vec![0.0; g.len()];
                if cols > 0 {
                    for r in 0..rows {
                        let span = r * cols..(r + 1) * cols;
                        let dot: f64 = g[span.clone()].iter().zip(&y[span.clone()]).map(|(p, q)| p * q).sum();
                        for k in span {
                            ga[k] = y[k] * (g[k] - dot);
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut gp = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * cols + offset..r * cols + offset + pc]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += pc;
                }
            }
            Op::GatherRows(a, index) => {
                self.accumulate_with(grads, *a, |ga| {
                    for (k, &src) in index.iter().enumerate() {
                        for (o, v) in ga[src * cols..(src + 1) * cols].iter_mut().zip(&g[k * cols..(k + 1) * cols]) {
                            *o += v;
                        }
                    }
                });
            }
            Op::ScatterRows(a, index) => {
                if self.requires_grad(*a) {
                    let mut ga = Vec::with_capacity(index.len() * cols);
                    for &dst in index.iter() {
                        ga.extend_from_slice(&g[dst * cols..(dst + 1) * cols]);
                    }
                    self.accumulate(grads, *a, ga);
                }
            }
            Op::ScaleRows(a, w) => {
                let (av, wv) = (self.value(*a), self.value(*w));
                if self.requires_grad(*a) {
                    let mut ga = g.to_vec();
                    if cols > 0 {
                        for (row, &s) in ga.chunks_mut(cols).zip(wv.data()) {
                            row.iter_mut().for_each(|v| *v *= s);
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*w) {
                    let gw = (0..rows)
                        .map(|r| g[r * cols..(r + 1) * cols].iter().zip(av.row(r)).map(|(p, q)| p * q).sum())
                        .collect();
                    self.accumulate(grads, *w, gw);
                }
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let inner = av.cols();
                if self.requires_grad(*a) {
                    let mut ga = bv.to_vec();
                    if inner > 0 {
                        for (row, &s) in ga.chunks_mut(inner).zip(g) {
                            row.iter_mut().for_each(|v| *v *= s);
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = av.to_vec();
                    if inner > 0 {
                        for (row, &s) in gb.chunks_mut(inner).zip(g) {
                            row.iter_mut().for_each(|v| *v *= s);
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::SegmentSoftmax(a, segment) => {
                let y = node.value.data();
                let nseg = segment.iter().copied().max().map_or(0, |m| m + 1);
                let mut dots = vec![0.0; nseg];
                for (k, &s) in segment.iter().enumerate() {
                    dots[s] += g[k] * y[k];
                }
                let ga = segment
                    .iter()
                    .enumerate()
                    .map(|(k, &s)| y[k] * (g[k] - dots[s]))
                    .collect();
                self.accumulate(grads, *a, ga);
            }
            Op::SpMatMul(transpose, a) => {
                if self.requires_grad(*a) {
                    let ga = transpose.matmul_dense(&gt()).expect("spmm grad shape");
                    self.accumulate(grads, *a, ga.to_vec());
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Pick(a, r, c) => {
                let ac = self.value(*a).cols();
                self.accumulate_with(grads, *a, |ga| ga[r * ac + c] += g[0]);
            }
        }
    }
}

fn segment_softmax_values(x: &[f64], segment: &[usize]) -> Vec<f64> {
    let nseg = segment.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nseg];
    for (k, &s) in segment.iter().enumerate() {
        members[s].push(k);
    }
    let mut out = vec![0.0; x.len()];
    let mut buf = Vec::new();
    for group in members.iter().filter(|m| !m.is_empty()) {
        buf.clear();
        buf.extend(group.iter().map(|&k| x[k]));
        softmax_in_place(&mut buf);
        for (&k, &v) in group.iter().zip(&buf) {
            out[k] = v;
        }
    }
    out
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Removes and returns the gradient for `v`.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
