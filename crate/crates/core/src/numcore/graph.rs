//! Reverse-mode differentiation over a linear record of primitive ops.
//!
//! A [`Graph`] is built eagerly: each op computes its value immediately and
//! appends a node holding the value plus whatever intermediates its backward
//! rule needs. Nodes are only ever appended, so node order is a topological
//! order and [`Graph::backward`] is a single reverse sweep.

use crate::error::{dim_err, Error, Result};
use crate::numcore::tensor::{gemm, Operand, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    SelectCols(Var, Vec<usize>),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var, Tensor),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    L2Normalize(Var, Vec<f64>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Counters collected while a graph is built.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GraphStats {
    pub nodes: usize,
    /// Multiply-adds performed by matrix products.
    pub matmul_macs: u64,
    /// Number of multi-head attention blocks evaluated.
    pub attention_calls: u64,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    stats: GraphStats,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            nodes: self.nodes.len(),
            ..self.stats
        }
    }

    pub(crate) fn count_attention(&mut self) {
        self.stats.attention_calls += 1;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.shape(), [1, 1]);
        t.data()[0]
    }

    /// Accumulated gradient of a trainable leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
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

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let [m, k] = self.shape(a);
        self.stats.matmul_macs += (m * k * value.cols()) as u64;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.needs(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    fn zip_same(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return dim_err(format!("{what}: {:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds the `1 x c` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return dim_err(format!(
                "add_row: bias {:?} for input {:?}",
                tb.shape(),
                tx.shape()
            ));
        }
        let mut value = tx.clone();
        for r in 0..value.rows() {
            for (v, b) in value.row_mut(r).iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let rg = self.needs(&[x, bias]);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Stacks row blocks that share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("concat_rows of nothing");
        };
        let cols = self.value(first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return dim_err(format!("concat_rows: {} columns vs {cols}", t.cols()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(rows, cols, data)?;
        let rg = self.needs(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Places column blocks side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("concat_cols of nothing");
        };
        let rows = self.value(first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return dim_err("concat_cols: row count mismatch");
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                value.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
            }
            offset += t.cols();
        }
        let rg = self.needs(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let t = self.value(a);
        if start + count > t.rows() || count == 0 {
            return dim_err(format!(
                "slice_rows {start}..{} of {} rows",
                start + count,
                t.rows()
            ));
        }
        let value = t.slice_rows(start, count);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let t = self.value(a);
        if start + count > t.cols() || count == 0 {
            return dim_err(format!(
                "slice_cols {start}..{} of {} columns",
                start + count,
                t.cols()
            ));
        }
        let mut value = Tensor::zeros(t.rows(), count);
        for r in 0..t.rows() {
            value
                .row_mut(r)
                .copy_from_slice(&t.row(r)[start..start + count]);
        }
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    /// Gathers the listed columns, in order.
    pub fn select_cols(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.cols()) {
            return Err(Error::Index(format!("column {bad} of {}", t.cols())));
        }
        if indices.is_empty() {
            return dim_err("select_cols with no indices");
        }
        let mut value = Tensor::zeros(t.rows(), indices.len());
        for r in 0..t.rows() {
            for (k, &c) in indices.iter().enumerate() {
                value.set(r, k, t.get(r, c));
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::SelectCols(a, indices.to_vec()), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.needs(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.cols() == 0 {
            return dim_err("softmax over an empty row");
        }
        let mut value = t.clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.cols() == 0 {
            return dim_err("log_softmax over an empty row");
        }
        let mut value = t.clone();
        let mut probs = t.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
            for (p, l) in probs.row_mut(r).iter_mut().zip(value.row(r)) {
                *p = l.exp();
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::LogSoftmax(a, probs), rg))
    }

    /// Row-wise layer normalization with learned `1 x d` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        if d < 2 {
            return dim_err(format!("layer_norm needs at least 2 features, got {d}"));
        }
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.shape() != [1, d] || tb.shape() != [1, d] {
            return dim_err("layer_norm gain/bias must be 1 x d");
        }
        let mut xhat = tx.clone();
        let mut inv_std = Vec::with_capacity(tx.rows());
        for r in 0..tx.rows() {
            let row = xhat.row_mut(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        let mut value = xhat.clone();
        for r in 0..value.rows() {
            for ((v, g), b) in value.row_mut(r).iter_mut().zip(tg.data()).zip(tb.data()) {
                *v = *v * g + b;
            }
        }
        let rg = self.needs(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Scales every row to unit Euclidean norm. Zero rows are rejected.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        let mut norms = Vec::with_capacity(value.rows());
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Validation(format!("row {r} has zero norm")));
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::L2Normalize(a, norms), rg))
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::filled(1, 1, self.value(a).sum());
        let rg = self.needs(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Accumulates `d loss / d leaf` into every trainable leaf reachable
    /// from `loss`. Calling it again without [`Graph::zero_grad`] adds to
    /// the stored gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Tensor>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = adj[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if self.grads.len() < self.nodes.len() {
                    self.grads.resize_with(self.nodes.len(), || None);
                }
                match &mut self.grads[idx] {
                    Some(g) => g.add_assign(&upstream),
                    slot @ None => *slot = Some(upstream),
                }
                continue;
            }
            self.propagate(idx, &upstream, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, dy: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        let live = |v: &Var| nodes[v.0].requires_grad;
        let acc = |v: Var, adj: &mut [Option<Tensor>], f: &mut dyn FnMut(&mut Tensor)| {
            let slot = &mut adj[v.0];
            let shape = nodes[v.0].value.shape();
            let g = slot.get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
            f(g);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                if live(a) {
                    acc(*a, adj, &mut |g| {
                        gemm(Operand::plain(dy), Operand::transposed(tb), g.data_mut(), 1.0)
                    });
                }
                if live(b) {
                    acc(*b, adj, &mut |g| {
                        gemm(Operand::transposed(ta), Operand::plain(dy), g.data_mut(), 1.0)
                    });
                }
            }
            Op::Transpose(a) => {
                if live(a) {
                    let dt = dy.transpose();
                    acc(*a, adj, &mut |g| g.add_assign(&dt));
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if live(v) {
                        acc(*v, adj, &mut |g| g.add_assign(dy));
                    }
                }
            }
            Op::Sub(a, b) => {
                if live(a) {
                    acc(*a, adj, &mut |g| g.add_assign(dy));
                }
                if live(b) {
                    acc(*b, adj, &mut |g| {
                        g.data_mut().iter_mut().zip(dy.data()).for_each(|(x, d)| *x -= d)
                    });
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                for (v, other) in [(a, tb), (b, ta)] {
                    if live(v) {
                        acc(*v, adj, &mut |g| {
                            for ((x, d), o) in g.data_mut().iter_mut().zip(dy.data()).zip(other.data()) {
                                *x += d * o;
                            }
                        });
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if live(x) {
                    acc(*x, adj, &mut |g| g.add_assign(dy));
                }
                if live(bias) {
                    acc(*bias, adj, &mut |g| {
                        for r in 0..dy.rows() {
                            for (x, d) in g.data_mut().iter_mut().zip(dy.row(r)) {
                                *x += d;
                            }
                        }
                    });
                }
            }
            Op::Scale(a, factor) => {
                if live(a) {
                    acc(*a, adj, &mut |g| {
                        g.data_mut().iter_mut().zip(dy.data()).for_each(|(x, d)| *x += factor * d)
                    });
                }
            }
            Op::ConcatRows(parts) => {
                let cols = dy.cols();
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    if live(p) {
                        let block = &dy.data()[offset..offset + len];
                        acc(*p, adj, &mut |g| {
                            g.data_mut().iter_mut().zip(block).for_each(|(x, d)| *x += d)
                        });
                    }
                    offset += len;
                }
                debug_assert_eq!(offset, dy.rows() * cols);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let width = nodes[p.0].value.cols();
                    if live(p) {
                        acc(*p, adj, &mut |g| {
                            for r in 0..dy.rows() {
                                let src = &dy.row(r)[offset..offset + width];
                                g.row_mut(r).iter_mut().zip(src).for_each(|(x, d)| *x += d);
                            }
                        });
                    }
                    offset += width;
                }
            }
            Op::SliceRows(a, start) => {
                if live(a) {
                    let cols = dy.cols();
                    acc(*a, adj, &mut |g| {
                        let dst = &mut g.data_mut()[start * cols..start * cols + dy.len()];
                        dst.iter_mut().zip(dy.data()).for_each(|(x, d)| *x += d);
                    });
                }
            }
            Op::SliceCols(a, start) => {
                if live(a) {
                    acc(*a, adj, &mut |g| {
                        for r in 0..dy.rows() {
                            let dst = &mut g.row_mut(r)[*start..*start + dy.cols()];
                            dst.iter_mut().zip(dy.row(r)).for_each(|(x, d)| *x += d);
                        }
                    });
                }
            }
            Op::SelectCols(a, indices) => {
                if live(a) {
                    acc(*a, adj, &mut |g| {
                        for r in 0..dy.rows() {
                            for (k, &c) in indices.iter().enumerate() {
                                let cur = g.get(r, c);
                                g.set(r, c, cur + dy.get(r, k));
                            }
                        }
                    });
                }
            }
            Op::Relu(a) => {
                if live(a) {
                    let input = &nodes[a.0].value;
                    acc(*a, adj, &mut |g| {
                        for ((x, d), i) in g.data_mut().iter_mut().zip(dy.data()).zip(input.data()) {
                            if *i > 0.0 {
                                *x += d;
                            }
                        }
                    });
                }
            }
            Op::Softmax(a) => {
                if live(a) {
                    let y = &node.value;
                    acc(*a, adj, &mut |g| {
                        for r in 0..y.rows() {
                            let dot: f64 = y.row(r).iter().zip(dy.row(r)).map(|(p, d)| p * d).sum();
                            for ((x, p), d) in g.row_mut(r).iter_mut().zip(y.row(r)).zip(dy.row(r)) {
                                *x += p * (d - dot);
                            }
                        }
                    });
                }
            }
            Op::LogSoftmax(a, probs) => {
                if live(a) {
                    acc(*a, adj, &mut |g| {
                        for r in 0..probs.rows() {
                            let total: f64 = dy.row(r).iter().sum();
                            for ((x, p), d) in g.row_mut(r).iter_mut().zip(probs.row(r)).zip(dy.row(r)) {
                                *x += d - p * total;
                            }
                        }
                    });
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let tg = &nodes[gain.0].value;
                let d = xhat.cols() as f64;
                if live(x) {
                    acc(*x, adj, &mut |g| {
                        for r in 0..xhat.rows() {
                            let xh = xhat.row(r);
                            let dxhat: Vec<f64> =
                                dy.row(r).iter().zip(tg.data()).map(|(d, g)| d * g).collect();
                            let sum: f64 = dxhat.iter().sum();
                            let dot: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                            let scale = inv_std[r] / d;
                            for ((out, dh), xv) in g.row_mut(r).iter_mut().zip(&dxhat).zip(xh) {
                                *out += scale * (d * dh - sum - xv * dot);
                            }
                        }
                    });
                }
                if live(gain) {
                    acc(*gain, adj, &mut |g| {
                        for r in 0..xhat.rows() {
                            for ((out, d), xv) in g.data_mut().iter_mut().zip(dy.row(r)).zip(xhat.row(r)) {
                                *out += d * xv;
                            }
                        }
                    });
                }
                if live(bias) {
                    acc(*bias, adj, &mut |g| {
                        for r in 0..dy.rows() {
                            g.data_mut().iter_mut().zip(dy.row(r)).for_each(|(o, d)| *o += d);
                        }
                    });
                }
            }
            Op::L2Normalize(a, norms) => {
                if live(a) {
                    let y = &node.value;
                    acc(*a, adj, &mut |g| {
                        for r in 0..y.rows() {
                            let dot: f64 = y.row(r).iter().zip(dy.row(r)).map(|(p, d)| p * d).sum();
                            for ((x, yv), d) in g.row_mut(r).iter_mut().zip(y.row(r)).zip(dy.row(r)) {
                                *x += (d - yv * dot) / norms[r];
                            }
                        }
                    });
                }
            }
            Op::Sum(a) => {
                if live(a) {
                    let d = dy.data()[0];
                    acc(*a, adj, &mut |g| g.data_mut().iter_mut().for_each(|x| *x += d));
                }
            }
        }
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Max-shifted softmax of a single row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
