//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass as a [`Node`] in
//! insertion order; inputs of a node always precede it, so the backward pass
//! is a single reverse sweep. Tapes are rebuilt per training window and are
//! strictly single-threaded.
//!
//! Adjoint semantics: `backward` clears the adjoints of every non-parameter
//! node, then accumulates into parameter adjoints. Calling `backward` twice
//! without [`Tape::reset_adjoints`] therefore yields exactly twice the
//! gradient on every parameter.

use rand::Rng;

use crate::error::{Error, Result};

use super::matrix::{gemm_nt_acc, gemm_tn_acc, Matrix};

/// Index of a node on its tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Whether stochastic ops (dropout) are active or pass through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum Op {
    /// Leaf holding data that does not receive a gradient of interest.
    Input,
    /// Leaf flagged trainable; adjoint survives across backward calls.
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// Broadcast-add a 1 x k bias row onto an n x k matrix.
    AddBias(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    ConcatRows(Vec<NodeId>),
    RowSelect(NodeId, Vec<usize>),
    RowSum(NodeId),
    ColSlice(NodeId, usize, usize),
    SumAll(NodeId),
    Scale(NodeId, f64),
    /// Mask entries are 0 or 1/(1-rate); recorded at forward time.
    Dropout(NodeId, Matrix),
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Operation record for one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    adjoints: Vec<Matrix>,
    params: Vec<NodeId>,
    /// Non-parameter adjoints may hold stale values from an earlier sweep.
    adjoints_dirty: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            nodes: Vec::new(),
            adjoints: Vec::new(),
            params: Vec::new(),
            adjoints_dirty: false,
        }
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.adjoints
            .push(Matrix::zeros(value.rows(), value.cols()));
        self.nodes.push(Node { op, value });
        id
    }

    /// Record a non-trainable leaf.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Record a trainable leaf. Its adjoint accumulates across backward calls.
    pub fn parameter(&mut self, value: Matrix) -> NodeId {
        let id = self.push(Op::Param, value);
        self.params.push(id);
        id
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn adjoint(&self, id: NodeId) -> &Matrix {
        &self.adjoints[id.0]
    }

    pub fn param_ids(&self) -> &[NodeId] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip(self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    /// a + bias with bias broadcast over the rows of a.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::Dimension(format!(
                "add_bias: {}x{} + {}x{}",
                av.rows(),
                av.cols(),
                bv.rows(),
                bv.cols()
            )));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for c in 0..value.cols() {
                let v = value.get(r, c) + bv.get(0, c);
                value.set(r, c, v);
            }
        }
        Ok(self.push(Op::AddBias(a, bias), value))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::Dimension(format!(
                "concat_cols: {}x{} with {}x{}",
                av.rows(),
                av.cols(),
                bv.rows(),
                bv.cols()
            )));
        }
        let mut value = Matrix::zeros(av.rows(), av.cols() + bv.cols());
        for r in 0..av.rows() {
            for c in 0..av.cols() {
                value.set(r, c, av.get(r, c));
            }
            for c in 0..bv.cols() {
                value.set(r, av.cols() + c, bv.get(r, c));
            }
        }
        Ok(self.push(Op::ConcatCols(a, b), value))
    }

    /// Stack parts vertically; all parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat_rows of no parts".into()));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::Dimension(format!(
                    "concat_rows: {} cols vs {} cols",
                    cols,
                    v.cols()
                )));
            }
            rows += v.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }

    /// Gather rows of a in the order given by `indices`.
    pub fn row_select(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let av = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::Index(format!(
                "row_select: row {} of a {}-row matrix",
                bad,
                av.rows()
            )));
        }
        let mut value = Matrix::zeros(indices.len(), av.cols());
        for (k, &i) in indices.iter().enumerate() {
            for c in 0..av.cols() {
                value.set(k, c, av.get(i, c));
            }
        }
        Ok(self.push(Op::RowSelect(a, indices.to_vec()), value))
    }

    /// Sum the rows of a into a single 1 x cols row. Rows are reduced in
    /// ascending order; an empty input yields the zero row.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut value = Matrix::zeros(1, av.cols());
        for r in 0..av.rows() {
            for c in 0..av.cols() {
                let v = value.get(0, c) + av.get(r, c);
                value.set(0, c, v);
            }
        }
        self.push(Op::RowSum(a), value)
    }

    pub fn col_slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(Error::Index(format!(
                "col_slice: columns {}..{} of a {}-column matrix",
                start,
                start + len,
                av.cols()
            )));
        }
        let mut value = Matrix::zeros(av.rows(), len);
        for r in 0..av.rows() {
            for c in 0..len {
                value.set(r, c, av.get(r, start + c));
            }
        }
        Ok(self.push(Op::ColSlice(a, start, len), value))
    }

    /// Sum of all entries as a 1 x 1 matrix, reduced in row-major order.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let mut total = 0.0;
        for &x in self.value(a).data() {
            total += x;
        }
        let mut value = Matrix::zeros(1, 1);
        value.set(0, 0, total);
        self.push(Op::SumAll(a), value)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let value = self.value(a).map(|x| k * x);
        self.push(Op::Scale(a, k), value)
    }

    /// Inverted dropout: in train mode each entry is zeroed with probability
    /// `rate` and survivors are scaled by 1/(1-rate). Eval mode is the exact
    /// identity (the input node is returned and the rng is untouched).
    pub fn dropout(
        &mut self,
        a: NodeId,
        rate: f64,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                rate
            )));
        }
        if mode == Mode::Eval {
            return Ok(a);
        }
        let av = self.value(a);
        let keep_scale = 1.0 / (1.0 - rate);
        let mask_data: Vec<f64> = (0..av.len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let mask = Matrix::from_vec(av.rows(), av.cols(), mask_data)?;
        let value = av.zip(&mask, |x, m| x * m)?;
        Ok(self.push(Op::Dropout(a, mask), value))
    }

    /// Zero every adjoint, including parameters.
    pub fn reset_adjoints(&mut self) {
        for adj in &mut self.adjoints {
            adj.fill(0.0);
        }
        self.adjoints_dirty = false;
    }

    /// Reverse sweep from a scalar loss. Parameter adjoints accumulate;
    /// all other adjoints are recomputed from scratch.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                r, c
            )));
        }
        if self.adjoints_dirty {
            for (i, node) in self.nodes.iter().enumerate() {
                if !matches!(node.op, Op::Param) {
                    self.adjoints[i].fill(0.0);
                }
            }
        }
        self.adjoints_dirty = true;
        {
            let seed = self.adjoints[loss.0].get(0, 0) + 1.0;
            self.adjoints[loss.0].set(0, 0, seed);
        }
        for i in (0..=loss.0).rev() {
            // Take this node's settled adjoint out so input adjoints can be
            // mutated without aliasing; put it back afterwards.
            let out_adj = std::mem::replace(&mut self.adjoints[i], Matrix::zeros(0, 0));
            self.backward_step(i, &out_adj);
            self.adjoints[i] = out_adj;
        }
        Ok(())
    }

    fn backward_step(&mut self, i: usize, out_adj: &Matrix) {
        match &self.nodes[i].op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                // a.adj += out_adj * b^T
                let b_val = &self.nodes[b.0].value;
                gemm_nt_acc(out_adj, b_val, &mut self.adjoints[a.0]);
                // b.adj += a^T * out_adj
                let a_val = &self.nodes[a.0].value;
                gemm_tn_acc(a_val, out_adj, &mut self.adjoints[b.0]);
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.adjoints[a.0].add_scaled(out_adj, 1.0);
                self.adjoints[b.0].add_scaled(out_adj, 1.0);
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.adjoints[a.0].add_scaled(out_adj, 1.0);
                self.adjoints[b.0].add_scaled(out_adj, -1.0);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                for k in 0..out_adj.len() {
                    let g = out_adj.data()[k];
                    let av = self.nodes[a.0].value.data()[k];
                    let bv = self.nodes[b.0].value.data()[k];
                    self.adjoints[a.0].data_mut()[k] += g * bv;
                    self.adjoints[b.0].data_mut()[k] += g * av;
                }
            }
            Op::Relu(a) => {
                let a = *a;
                for k in 0..out_adj.len() {
                    if self.nodes[a.0].value.data()[k] > 0.0 {
                        self.adjoints[a.0].data_mut()[k] += out_adj.data()[k];
                    }
                }
            }
            Op::Sigmoid(a) => {
                let a = *a;
                for k in 0..out_adj.len() {
                    let s = self.nodes[i].value.data()[k];
                    self.adjoints[a.0].data_mut()[k] += out_adj.data()[k] * s * (1.0 - s);
                }
            }
            Op::Tanh(a) => {
                let a = *a;
                for k in 0..out_adj.len() {
                    let t = self.nodes[i].value.data()[k];
                    self.adjoints[a.0].data_mut()[k] += out_adj.data()[k] * (1.0 - t * t);
                }
            }
            Op::AddBias(a, bias) => {
                let (a, bias) = (*a, *bias);
                self.adjoints[a.0].add_scaled(out_adj, 1.0);
                let cols = out_adj.cols();
                for r in 0..out_adj.rows() {
                    for c in 0..cols {
                        self.adjoints[bias.0].data_mut()[c] += out_adj.get(r, c);
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let a_cols = self.nodes[a.0].value.cols();
                let b_cols = self.nodes[b.0].value.cols();
                for r in 0..out_adj.rows() {
                    for c in 0..a_cols {
                        self.adjoints[a.0].data_mut()[r * a_cols + c] += out_adj.get(r, c);
                    }
                    for c in 0..b_cols {
                        self.adjoints[b.0].data_mut()[r * b_cols + c] +=
                            out_adj.get(r, a_cols + c);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut row0 = 0;
                for &p in parts {
                    let (rows, cols) = self.nodes[p.0].value.shape();
                    for r in 0..rows {
                        for c in 0..cols {
                            self.adjoints[p.0].data_mut()[r * cols + c] +=
                                out_adj.get(row0 + r, c);
                        }
                    }
                    row0 += rows;
                }
            }
            Op::RowSelect(a, indices) => {
                let a = *a;
                let cols = out_adj.cols();
                for (k, &src) in indices.iter().enumerate() {
                    for c in 0..cols {
                        self.adjoints[a.0].data_mut()[src * cols + c] += out_adj.get(k, c);
                    }
                }
            }
            Op::RowSum(a) => {
                let a = *a;
                let (rows, cols) = self.nodes[a.0].value.shape();
                for r in 0..rows {
                    for c in 0..cols {
                        self.adjoints[a.0].data_mut()[r * cols + c] += out_adj.get(0, c);
                    }
                }
            }
            Op::ColSlice(a, start, len) => {
                let (a, start, len) = (*a, *start, *len);
                let a_cols = self.nodes[a.0].value.cols();
                for r in 0..out_adj.rows() {
                    for c in 0..len {
                        self.adjoints[a.0].data_mut()[r * a_cols + start + c] +=
                            out_adj.get(r, c);
                    }
                }
            }
            Op::SumAll(a) => {
                let a = *a;
                let g = out_adj.get(0, 0);
                for x in self.adjoints[a.0].data_mut() {
                    *x += g;
                }
            }
            Op::Scale(a, k) => {
                let (a, k) = (*a, *k);
                self.adjoints[a.0].add_scaled(out_adj, k);
            }
            Op::Dropout(a, mask) => {
                let a = *a;
                for k in 0..out_adj.len() {
                    self.adjoints[a.0].data_mut()[k] += out_adj.data()[k] * mask.data()[k];
                }
            }
        }
    }
}
