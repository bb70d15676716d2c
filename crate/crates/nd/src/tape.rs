//! Tape-based reverse-mode differentiation.
//!
//! Operations append nodes to a [`Tape`] in execution order, so inputs always
//! precede outputs. [`Tape::backward`] walks the nodes in reverse and
//! accumulates vector-Jacobian products into per-node gradient buffers.
//! Nodes that do not depend on any parameter leaf are never visited.

use crate::tensor::{gemm, Tensor};
use crate::{NdError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[B, N] + [1, N]`, the row broadcast over every row.
    AddRow(Var, Var),
    /// `[B, N] * [B, 1]`, the column broadcast over every column.
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    LogSigmoid(Var),
    Square(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    /// Output row `i` is row `i` of `sources[index[i]]`.
    GatherRows(Vec<Var>, Vec<usize>),
    /// Output row `i` is row `index[i]` of the input.
    SelectRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros of the right shape if the loss does not
    /// depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

/// Exponential linear unit with unit scale.
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Logistic function, evaluated without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, evaluated without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies the current value of `v` into a fresh constant, cutting the
    /// gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, name)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a `[1, N]` row to every row of a `[B, N]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(NdError::Shape {
                op: "add_row",
                lhs: ta.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let mut value = Tensor::zeros(&[ta.rows(), ta.cols()]);
        let r = tr.data();
        for i in 0..ta.rows() {
            for ((o, &x), &y) in value.row_slice_mut(i).iter_mut().zip(ta.row_slice(i)).zip(r) {
                *o = x + y;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// Multiplies every column of a `[B, N]` matrix by a `[B, 1]` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(NdError::Shape {
                op: "mul_col",
                lhs: ta.shape().to_vec(),
                rhs: tc.shape().to_vec(),
            });
        }
        let mut value = Tensor::zeros(&[ta.rows(), ta.cols()]);
        for i in 0..ta.rows() {
            let s = tc.data()[i];
            for (o, &x) in value.row_slice_mut(i).iter_mut().zip(ta.row_slice(i)) {
                *o = x * s;
            }
        }
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(value, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), elu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    /// `ln(sigmoid(x)) = -softplus(-x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::LogSigmoid(a), |x| -softplus(-x))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Elementwise `|x|`; the subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Tensor::zeros(&[rows, total]);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(NdError::Shape {
                    op: "concat_cols",
                    lhs: vec![rows],
                    rhs: t.shape().to_vec(),
                });
            }
            let c = t.cols();
            for i in 0..rows {
                value.row_slice_mut(i)[offset..offset + c].copy_from_slice(t.row_slice(i));
            }
            offset += c;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of a `[B, N]` matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.cols() {
            return Err(NdError::Invalid(format!(
                "slice_cols {start}..{} out of {} columns",
                start + len,
                t.cols()
            )));
        }
        let rows = t.rows();
        let mut value = Tensor::zeros(&[rows, len]);
        for i in 0..rows {
            value.row_slice_mut(i).copy_from_slice(&t.row_slice(i)[start..start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(NdError::Shape {
                    op: "concat_rows",
                    lhs: vec![cols],
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let value = Tensor::from_vec(vec![rows, cols], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Builds a matrix whose row `i` is row `i` of `sources[index[i]]`.
    ///
    /// All sources share one shape; used to pick per-sample recurrent states
    /// at different time steps out of a batched unroll.
    pub fn gather_rows(&mut self, sources: &[Var], index: &[usize]) -> Result<Var> {
        let shape = self.value(sources[0]).shape().to_vec();
        let (rows, cols) = (self.value(sources[0]).rows(), self.value(sources[0]).cols());
        if index.len() != rows {
            return Err(NdError::Invalid(format!(
                "gather_rows: {} indices for {rows} rows",
                index.len()
            )));
        }
        for &s in sources {
            if self.value(s).shape() != shape.as_slice() {
                return Err(NdError::Shape {
                    op: "gather_rows",
                    lhs: shape,
                    rhs: self.value(s).shape().to_vec(),
                });
            }
        }
        let mut value = Tensor::zeros(&[rows, cols]);
        for (i, &k) in index.iter().enumerate() {
            if k >= sources.len() {
                return Err(NdError::Invalid(format!("gather_rows: source {k} out of range")));
            }
            value.row_slice_mut(i).copy_from_slice(self.value(sources[k]).row_slice(i));
        }
        let rg = sources.iter().any(|&s| self.rg(s));
        Ok(self.push(value, Op::GatherRows(sources.to_vec(), index.to_vec()), rg))
    }

    /// Output row `i` is row `index[i]` of `a`; rows may repeat.
    pub fn select_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let cols = t.cols();
        let mut value = Tensor::zeros(&[index.len(), cols]);
        for (i, &k) in index.iter().enumerate() {
            if k >= t.rows() {
                return Err(NdError::Invalid(format!("select_rows: row {k} out of range")));
            }
            value.row_slice_mut(i).copy_from_slice(t.row_slice(k));
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::SelectRows(a, index.to_vec()), rg))
    }

    /// Sum of all elements, shape `[1, 1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Row sums, `[B, N] -> [B, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let rows = t.rows();
        let data = (0..rows).map(|i| t.row_slice(i).iter().sum()).collect();
        let value = Tensor::from_vec(vec![rows, 1], data).expect("row sums");
        let rg = self.rg(a);
        self.push(value, Op::SumCols(a), rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(NdError::NonScalarLoss(lt.shape().to_vec()));
        }
        if !lt.is_finite() {
            return Err(NdError::NonFinite("loss"));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                if let Some(g) = &grads[i] {
                    if !g.is_finite() {
                        return Err(NdError::NonFinite("gradient accumulation"));
                    }
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contrib: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(contrib.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        if !self.rg(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().expect("slot"));
    }

    fn elementwise(&self, g: &Tensor, a: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let x = self.value(a);
        let data = g.data().iter().zip(x.data()).map(|(&g, &x)| f(g, x)).collect();
        Tensor::from_vec(x.shape().to_vec(), data).expect("same shape")
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // dA = G B^T, dB = A^T G
                self.accumulate_with(grads, *a, |ga| {
                    gemm(m, n, k, g.data(), (n as isize, 1), tb.data(), (1, n as isize), ga.data_mut(), 1.0)
                });
                self.accumulate_with(grads, *b, |gb| {
                    gemm(k, m, n, ta.data(), (1, k as isize), g.data(), (n as isize, 1), gb.data_mut(), 1.0)
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::from_vec(g.shape().to_vec(), d)?);
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(g.shape().to_vec(), d)?);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate_with(grads, *row, |gr| {
                    for i in 0..g.rows() {
                        for (o, &v) in gr.data_mut().iter_mut().zip(g.row_slice(i)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                self.accumulate_with(grads, *a, |ga| {
                    for i in 0..g.rows() {
                        let s = tc.data()[i];
                        for (o, &v) in ga.row_slice_mut(i).iter_mut().zip(g.row_slice(i)) {
                            *o += v * s;
                        }
                    }
                });
                self.accumulate_with(grads, *col, |gc| {
                    for i in 0..g.rows() {
                        let d: f64 = g.row_slice(i).iter().zip(ta.row_slice(i)).map(|(x, y)| x * y).sum();
                        gc.data_mut()[i] += d;
                    }
                });
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| v * c)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Sigmoid(a) => {
                let d = g.data().iter().zip(out.data()).map(|(&g, &s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.shape().to_vec(), d)?);
            }
            Op::Tanh(a) => {
                let d = g.data().iter().zip(out.data()).map(|(&g, &t)| g * (1.0 - t * t)).collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.shape().to_vec(), d)?);
            }
            Op::Elu(a) => {
                let d = self.elementwise(g, *a, |g, x| if x >= 0.0 { g } else { g * x.exp() });
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = g.data().iter().zip(out.data()).map(|(&g, &e)| g * e).collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.shape().to_vec(), d)?);
            }
            Op::Log(a) => {
                let d = self.elementwise(g, *a, |g, x| g / x);
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = self.elementwise(g, *a, |g, x| g * sigmoid(x));
                self.accumulate(grads, *a, d);
            }
            Op::LogSigmoid(a) => {
                let d = self.elementwise(g, *a, |g, x| g * sigmoid(-x));
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = self.elementwise(g, *a, |g, x| 2.0 * g * x);
                self.accumulate(grads, *a, d);
            }
            Op::Abs(a) => {
                let d = self.elementwise(g, *a, |g, x| if x > 0.0 { g } else if x < 0.0 { -g } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = self.elementwise(g, *a, |g, x| if x < lo || x > hi { 0.0 } else { g });
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    self.accumulate_with(grads, p, |gp| {
                        for i in 0..g.rows() {
                            for (o, &v) in gp.row_slice_mut(i).iter_mut().zip(&g.row_slice(i)[offset..offset + c]) {
                                *o += v;
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let start = *start;
                let len = g.cols();
                self.accumulate_with(grads, *a, |ga| {
                    for i in 0..g.rows() {
                        for (o, &v) in ga.row_slice_mut(i)[start..start + len].iter_mut().zip(g.row_slice(i)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    self.accumulate_with(grads, p, |gp| {
                        let c = g.cols();
                        for (o, &v) in gp.data_mut().iter_mut().zip(&g.data()[row * c..(row + r) * c]) {
                            *o += v;
                        }
                    });
                    row += r;
                }
            }
            Op::GatherRows(sources, index) => {
                for (k, &s) in sources.iter().enumerate() {
                    if !self.rg(s) || !index.contains(&k) {
                        continue;
                    }
                    self.accumulate_with(grads, s, |gs| {
                        for (i, &src) in index.iter().enumerate() {
                            if src == k {
                                for (o, &v) in gs.row_slice_mut(i).iter_mut().zip(g.row_slice(i)) {
                                    *o += v;
                                }
                            }
                        }
                    });
                }
            }
            Op::SelectRows(a, index) => {
                self.accumulate_with(grads, *a, |ga| {
                    for (i, &k) in index.iter().enumerate() {
                        for (o, &v) in ga.row_slice_mut(k).iter_mut().zip(g.row_slice(i)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let s = g.item();
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, s));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let s = g.item() / t.len() as f64;
                self.accumulate(grads, *a, Tensor::full(t.shape(), s));
            }
            Op::SumCols(a) => {
                self.accumulate_with(grads, *a, |ga| {
                    for i in 0..g.rows() {
                        let s = g.data()[i];
                        ga.row_slice_mut(i).iter_mut().for_each(|o| *o += s);
                    }
                });
            }
        }
        Ok(())
    }
}
