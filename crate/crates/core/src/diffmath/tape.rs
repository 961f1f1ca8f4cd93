use alloc::vec::Vec;

use super::{dot, gemm_nn, gemm_nt, gemm_tn, DiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Concat(Vec<usize>),
    RowSoftmax(usize),
    RowLogSoftmax(usize),
    Log(usize),
    Exp(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Powf(usize, f64),
    Sum(usize),
    Mean(usize),
    GatherRows(usize, Vec<usize>),
    Transpose(usize),
    Column(usize, usize),
    MulCol(usize, usize),
    PickPerRow(usize, Vec<usize>),
    GroupDot(usize, usize, usize),
    GroupWeightedSum(usize, usize, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    tracked: bool,
    op: Op,
}

/// Single-use operation recorder.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a tracked leaf; `None` for untracked or unreached values.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        rows: t.rows,
        cols: t.cols,
        data: t.data.iter().map(|&x| f(x)).collect(),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[usize]) -> Var {
        let tracked = parents.iter().any(|&p| self.nodes[p].tracked);
        self.nodes.push(Node { value, tracked, op });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            tracked: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that is never differentiated.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            tracked: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (x, y) = (self.val(a), self.val(b));
        if x.cols != y.rows {
            return Err(shape_err("matmul", x, y));
        }
        let mut out = Tensor::zeros(x.rows, y.cols);
        gemm_nn(&x.data, &y.data, &mut out.data, x.rows, x.cols, y.cols);
        Ok(self.push(out, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        let (x, y) = (self.val(a), self.val(b));
        if x.shape() != y.shape() {
            return Err(shape_err(op, x, y));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("add", a, b)?;
        let out = zip(self.val(a), self.val(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("sub", a, b)?;
        let out = zip(self.val(a), self.val(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mul", a, b)?;
        let out = zip(self.val(a), self.val(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    /// `x + 1 * row`, broadcasting a `1 x n` row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, DiffError> {
        let (t, r) = (self.val(x), self.val(row));
        if r.rows != 1 || r.cols != t.cols {
            return Err(shape_err("add_row", t, r));
        }
        let mut out = t.clone();
        for chunk in out.data.chunks_mut(t.cols.max(1)) {
            for (o, b) in chunk.iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x.0, row.0), &[x.0, row.0]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = map(self.val(x), |v| v * c);
        self.push(out, Op::Scale(x.0, c), &[x.0])
    }

    /// Column-wise concatenation of equally tall matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let Some(first) = parts.first() else {
            return Err(DiffError::Invalid {
                op: "concat",
                detail: "no inputs",
            });
        };
        let rows = self.val(*first).rows;
        let mut cols = 0;
        for p in parts {
            let t = self.val(*p);
            if t.rows != rows {
                return Err(shape_err("concat", self.val(*first), t));
            }
            cols += t.cols;
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let t = self.val(*p);
            for i in 0..rows {
                out.data[i * cols + off..i * cols + off + t.cols].copy_from_slice(t.row(i));
            }
            off += t.cols;
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(out, Op::Concat(idx.clone()), &idx))
    }

    pub fn row_softmax(&mut self, x: Var) -> Var {
        let t = self.val(x);
        let mut out = t.clone();
        for row in out.data.chunks_mut(t.cols.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = libm::exp(*v - m);
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(out, Op::RowSoftmax(x.0), &[x.0])
    }

    pub fn row_log_softmax(&mut self, x: Var) -> Var {
        let t = self.val(x);
        let mut out = t.clone();
        for row in out.data.chunks_mut(t.cols.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|v| libm::exp(v - m)).sum();
            let lse = m + libm::log(s);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(out, Op::RowLogSoftmax(x.0), &[x.0])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = map(self.val(x), libm::log);
        self.push(out, Op::Log(x.0), &[x.0])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = map(self.val(x), libm::exp);
        self.push(out, Op::Exp(x.0), &[x.0])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = map(self.val(x), libm::tanh);
        self.push(out, Op::Tanh(x.0), &[x.0])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = map(self.val(x), |v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu(x.0), &[x.0])
    }

    /// Elementwise `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        let out = map(self.val(x), |v| v.max(0.0) + libm::log1p(libm::exp(-libm::fabs(v))));
        self.push(out, Op::Softplus(x.0), &[x.0])
    }

    /// Elementwise `x^p`; inputs must be non-negative when `p` is fractional.
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        let out = map(self.val(x), |v| libm::pow(v, p));
        self.push(out, Op::Powf(x.0, p), &[x.0])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.val(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x.0), &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.val(x);
        let s: f64 = t.data.iter().sum();
        let n = t.data.len().max(1) as f64;
        self.push(Tensor::scalar(s / n), Op::Mean(x.0), &[x.0])
    }

    /// Rows of `x` at `idx`, in order (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, DiffError> {
        let t = self.val(x);
        let mut out = Tensor::zeros(idx.len(), t.cols);
        for (r, &i) in idx.iter().enumerate() {
            if i >= t.rows {
                return Err(DiffError::Invalid {
                    op: "gather_rows",
                    detail: "row index out of range",
                });
            }
            out.data[r * t.cols..(r + 1) * t.cols].copy_from_slice(t.row(i));
        }
        Ok(self.push(out, Op::GatherRows(x.0, idx.to_vec()), &[x.0]))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.val(x).transpose();
        self.push(out, Op::Transpose(x.0), &[x.0])
    }

    /// Column `j` of `x` as an `n x 1` matrix.
    pub fn column(&mut self, x: Var, j: usize) -> Result<Var, DiffError> {
        let t = self.val(x);
        if j >= t.cols {
            return Err(DiffError::Invalid {
                op: "column",
                detail: "column index out of range",
            });
        }
        let data = (0..t.rows).map(|i| t.get(i, j)).collect();
        let out = Tensor {
            rows: t.rows,
            cols: 1,
            data,
        };
        Ok(self.push(out, Op::Column(x.0, j), &[x.0]))
    }

    /// Scales row `i` of `x` by `c[i]`, with `c` an `n x 1` column.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var, DiffError> {
        let (t, s) = (self.val(x), self.val(c));
        if s.cols != 1 || s.rows != t.rows {
            return Err(shape_err("mul_col", t, s));
        }
        let mut out = t.clone();
        for (row, &f) in out.data.chunks_mut(t.cols.max(1)).zip(&s.data) {
            row.iter_mut().for_each(|v| *v *= f);
        }
        Ok(self.push(out, Op::MulCol(x.0, c.0), &[x.0, c.0]))
    }

    /// `out[i] = x[i][idx[i]]` as an `n x 1` column.
    pub fn pick_per_row(&mut self, x: Var, idx: &[usize]) -> Result<Var, DiffError> {
        let t = self.val(x);
        if idx.len() != t.rows || idx.iter().any(|&j| j >= t.cols) {
            return Err(DiffError::Invalid {
                op: "pick_per_row",
                detail: "one in-range column index per row required",
            });
        }
        let data = idx.iter().enumerate().map(|(i, &j)| t.get(i, j)).collect();
        let out = Tensor {
            rows: t.rows,
            cols: 1,
            data,
        };
        Ok(self.push(out, Op::PickPerRow(x.0, idx.to_vec()), &[x.0]))
    }

    /// Grouped dot products: `q` is `b x d`, `keys` is `(b*group) x d`;
    /// `out[i][j] = q[i] . keys[i*group + j]`.
    pub fn group_dot(&mut self, q: Var, keys: Var, group: usize) -> Result<Var, DiffError> {
        let (a, k) = (self.val(q), self.val(keys));
        if a.cols != k.cols || a.rows * group != k.rows {
            return Err(shape_err("group_dot", a, k));
        }
        let mut out = Tensor::zeros(a.rows, group);
        for i in 0..a.rows {
            for j in 0..group {
                out.data[i * group + j] = dot(a.row(i), k.row(i * group + j));
            }
        }
        Ok(self.push(out, Op::GroupDot(q.0, keys.0, group), &[q.0, keys.0]))
    }

    /// Grouped weighted sums: `w` is `b x group`, `vals` is
    /// `(b*group) x d`; `out[i] = sum_j w[i][j] * vals[i*group + j]`.
    pub fn group_weighted_sum(&mut self, w: Var, vals: Var, group: usize) -> Result<Var, DiffError> {
        let (a, v) = (self.val(w), self.val(vals));
        if a.cols != group || a.rows * group != v.rows {
            return Err(shape_err("group_weighted_sum", a, v));
        }
        let d = v.cols;
        let mut out = Tensor::zeros(a.rows, d);
        for i in 0..a.rows {
            let orow = &mut out.data[i * d..(i + 1) * d];
            for j in 0..group {
                let wij = a.get(i, j);
                for (o, &x) in orow.iter_mut().zip(v.row(i * group + j)) {
                    *o += wij * x;
                }
            }
        }
        Ok(self.push(out, Op::GroupWeightedSum(w.0, vals.0, group), &[w.0, vals.0]))
    }

    /// Reverse pass from a `1 x 1` loss. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, DiffError> {
        if self.consumed {
            return Err(DiffError::Consumed);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(DiffError::NonScalarLoss(shape));
        }
        if !self.nodes[loss.0].tracked {
            return Err(DiffError::Untracked);
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = alloc::vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let y = &nodes[i].value;
        let mut acc = |p: usize, f: &mut dyn FnMut(&mut Tensor)| {
            if !nodes[p].tracked {
                return;
            }
            let slot = grads[p].get_or_insert_with(|| {
                let (r, c) = nodes[p].value.shape();
                Tensor::zeros(r, c)
            });
            f(slot);
        };
        let add_into = |dst: &mut Tensor, src: &Tensor| {
            for (d, s) in dst.data.iter_mut().zip(&src.data) {
                *d += s;
            }
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, w) = (&nodes[*a].value, &nodes[*b].value);
                acc(*a, &mut |d| gemm_nt(&g.data, &w.data, &mut d.data, x.rows, w.cols, x.cols));
                acc(*b, &mut |d| gemm_tn(&x.data, &g.data, &mut d.data, x.cols, x.rows, w.cols));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| {
                    for (d, s) in d.data.iter_mut().zip(&g.data) {
                        *d -= s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (x, w) = (&nodes[*a].value, &nodes[*b].value);
                acc(*a, &mut |d| {
                    for ((d, gv), wv) in d.data.iter_mut().zip(&g.data).zip(&w.data) {
                        *d += gv * wv;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, gv), xv) in d.data.iter_mut().zip(&g.data).zip(&x.data) {
                        *d += gv * xv;
                    }
                });
            }
            Op::AddRow(x, r) => {
                acc(*x, &mut |d| add_into(d, g));
                acc(*r, &mut |d| {
                    for row in g.data.chunks(g.cols.max(1)) {
                        for (dv, gv) in d.data.iter_mut().zip(row) {
                            *dv += gv;
                        }
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |d| {
                for (d, gv) in d.data.iter_mut().zip(&g.data) {
                    *d += c * gv;
                }
            }),
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = nodes[p].value.cols;
                    acc(p, &mut |d| {
                        for r in 0..g.rows {
                            for c in 0..w {
                                d.data[r * w + c] += g.data[r * g.cols + off + c];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::RowSoftmax(x) => acc(*x, &mut |d| {
                let n = y.cols.max(1);
                for ((drow, grow), yrow) in d.data.chunks_mut(n).zip(g.data.chunks(n)).zip(y.data.chunks(n)) {
                    let s = dot(grow, yrow);
                    for ((dv, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *dv += yv * (gv - s);
                    }
                }
            }),
            Op::RowLogSoftmax(x) => acc(*x, &mut |d| {
                let n = y.cols.max(1);
                for ((drow, grow), yrow) in d.data.chunks_mut(n).zip(g.data.chunks(n)).zip(y.data.chunks(n)) {
                    let s: f64 = grow.iter().sum();
                    for ((dv, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *dv += gv - libm::exp(*yv) * s;
                    }
                }
            }),
            Op::Log(x) => {
                let xv = &nodes[*x].value;
                acc(*x, &mut |d| {
                    for ((dv, gv), v) in d.data.iter_mut().zip(&g.data).zip(&xv.data) {
                        *dv += gv / v;
                    }
                });
            }
            Op::Exp(x) => acc(*x, &mut |d| {
                for ((dv, gv), yv) in d.data.iter_mut().zip(&g.data).zip(&y.data) {
                    *dv += gv * yv;
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |d| {
                for ((dv, gv), yv) in d.data.iter_mut().zip(&g.data).zip(&y.data) {
                    *dv += gv * (1.0 - yv * yv);
                }
            }),
            Op::Relu(x) => {
                let xv = &nodes[*x].value;
                acc(*x, &mut |d| {
                    for ((dv, gv), v) in d.data.iter_mut().zip(&g.data).zip(&xv.data) {
                        if *v > 0.0 {
                            *dv += gv;
                        }
                    }
                });
            }
            Op::Softplus(x) => {
                let xv = &nodes[*x].value;
                acc(*x, &mut |d| {
                    for ((dv, gv), v) in d.data.iter_mut().zip(&g.data).zip(&xv.data) {
                        *dv += gv / (1.0 + libm::exp(-v));
                    }
                });
            }
            Op::Powf(x, p) => {
                let xv = &nodes[*x].value;
                acc(*x, &mut |d| {
                    for ((dv, gv), v) in d.data.iter_mut().zip(&g.data).zip(&xv.data) {
                        if *v != 0.0 || *p >= 1.0 {
                            *dv += gv * p * libm::pow(*v, p - 1.0);
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let s = g.item();
                acc(*x, &mut |d| d.data.iter_mut().for_each(|v| *v += s));
            }
            Op::Mean(x) => {
                let n = nodes[*x].value.data.len().max(1) as f64;
                let s = g.item() / n;
                acc(*x, &mut |d| d.data.iter_mut().for_each(|v| *v += s));
            }
            Op::GatherRows(x, idx) => acc(*x, &mut |d| {
                let c = d.cols;
                for (r, &src) in idx.iter().enumerate() {
                    for k in 0..c {
                        d.data[src * c + k] += g.data[r * c + k];
                    }
                }
            }),
            Op::Transpose(x) => acc(*x, &mut |d| add_into(d, &g.transpose())),
            Op::Column(x, j) => acc(*x, &mut |d| {
                let c = d.cols;
                for (r, gv) in g.data.iter().enumerate() {
                    d.data[r * c + j] += gv;
                }
            }),
            Op::MulCol(x, c) => {
                let (xv, cv) = (&nodes[*x].value, &nodes[*c].value);
                let n = xv.cols.max(1);
                acc(*x, &mut |d| {
                    for ((drow, grow), f) in d.data.chunks_mut(n).zip(g.data.chunks(n)).zip(&cv.data) {
                        for (dv, gv) in drow.iter_mut().zip(grow) {
                            *dv += gv * f;
                        }
                    }
                });
                acc(*c, &mut |d| {
                    for ((dv, grow), xrow) in d.data.iter_mut().zip(g.data.chunks(n)).zip(xv.data.chunks(n)) {
                        *dv += dot(grow, xrow);
                    }
                });
            }
            Op::PickPerRow(x, idx) => acc(*x, &mut |d| {
                let c = d.cols;
                for (r, &j) in idx.iter().enumerate() {
                    d.data[r * c + j] += g.data[r];
                }
            }),
            Op::GroupDot(q, k, group) => {
                let (qv, kv) = (&nodes[*q].value, &nodes[*k].value);
                let dim = qv.cols;
                acc(*q, &mut |d| {
                    for b in 0..qv.rows {
                        let drow = &mut d.data[b * dim..(b + 1) * dim];
                        for j in 0..*group {
                            let gv = g.data[b * group + j];
                            for (dv, kx) in drow.iter_mut().zip(kv.row(b * group + j)) {
                                *dv += gv * kx;
                            }
                        }
                    }
                });
                acc(*k, &mut |d| {
                    for b in 0..qv.rows {
                        for j in 0..*group {
                            let gv = g.data[b * group + j];
                            let r = b * group + j;
                            for (dv, qx) in d.data[r * dim..(r + 1) * dim].iter_mut().zip(qv.row(b)) {
                                *dv += gv * qx;
                            }
                        }
                    }
                });
            }
            Op::GroupWeightedSum(w, v, group) => {
                let (wv, vv) = (&nodes[*w].value, &nodes[*v].value);
                let dim = vv.cols;
                acc(*w, &mut |d| {
                    for b in 0..wv.rows {
                        for j in 0..*group {
                            d.data[b * group + j] += dot(g.row(b), vv.row(b * group + j));
                        }
                    }
                });
                acc(*v, &mut |d| {
                    for b in 0..wv.rows {
                        for j in 0..*group {
                            let wij = wv.get(b, j);
                            let r = b * group + j;
                            for (dv, gv) in d.data[r * dim..(r + 1) * dim].iter_mut().zip(g.row(b)) {
                                *dv += wij * gv;
                            }
                        }
                    }
                });
            }
        }
    }
}
