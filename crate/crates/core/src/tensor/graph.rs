use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

use super::kernels;
use super::Tensor;

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, rows: (usize, usize), cols: (usize, usize) },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax { input: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, means: Vec<f64>, rstds: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, scale: f64 },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// How [`Graph::cross_entropy`] reduces over scored positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// A recorded forward computation. Nodes are appended in evaluation order,
/// which is already a topological order, so backward is a reverse scan.
///
/// Parameter values are borrowed from the [`ParamStore`] and never copied
/// or mutated while the graph is alive.
#[derive(Debug)]
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives no gradient (masks, fixed encodings).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient, retrievable via [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The node for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(self.dim_err("matmul", a, b));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`, the transposed-operand form of matmul used for `QKᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (n, k2) = self.value(b).dims2();
        if k != k2 {
            return Err(self.dim_err("matmul_nt", a, b));
        }
        let out = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNT(a, b), rg))
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let ta = self.value(a);
        let tb = self.value(b);
        if ta.shape() == tb.shape() {
            Ok(Broadcast::Same)
        } else if tb.numel() == 1 {
            Ok(Broadcast::Scalar)
        } else if tb.rows() == 1 && tb.numel() == ta.cols() {
            Ok(Broadcast::Row)
        } else {
            Err(self.dim_err(op, a, b))
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let da = self.value(a).data();
        let db = self.value(b).data();
        match kind {
            Broadcast::Same => da.iter().zip(db).map(|(x, y)| f(*x, *y)).collect(),
            Broadcast::Scalar => da.iter().map(|x| f(*x, db[0])).collect(),
            Broadcast::Row => {
                let n = db.len();
                da.iter().enumerate().map(|(i, x)| f(*x, db[i % n])).collect()
            }
        }
    }

    /// Elementwise sum; `b` may also be a row vector or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = self.broadcast_kind("add", a, b)?;
        let out = self.zip_broadcast(a, b, kind, |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b, kind), rg))
    }

    /// Elementwise product; `b` may also be a row vector or a scalar.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = self.broadcast_kind("mul", a, b)?;
        let out = self.zip_broadcast(a, b, kind, |x, y| x * y);
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul(a, b, kind), rg))
    }

    /// Multiplies by a fixed scalar (a `mul` against a constant leaf).
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = self.constant(Tensor::scalar(c));
        self.mul(a, k)
    }

    /// Concatenates matrices along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let (r0, c0) = self.value(first).dims2();
        let out = match axis {
            0 => {
                let mut rows = 0;
                let mut data = Vec::new();
                for &v in inputs {
                    let t = self.value(v);
                    if t.cols() != c0 {
                        return Err(self.dim_err("concat", first, v));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::new(vec![rows, c0], data)?
            }
            1 => {
                let mut cols = 0;
                for &v in inputs {
                    let t = self.value(v);
                    if t.rows() != r0 {
                        return Err(self.dim_err("concat", first, v));
                    }
                    cols += t.cols();
                }
                let mut data = Vec::with_capacity(r0 * cols);
                for r in 0..r0 {
                    for &v in inputs {
                        data.extend_from_slice(self.value(v).row(r));
                    }
                }
                Tensor::new(vec![r0, cols], data)?
            }
            _ => return Err(Error::Contract(format!("concat axis {axis} unsupported"))),
        };
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Sub-matrix `[rows.0, rows.1) × [cols.0, cols.1)`.
    pub fn slice(&mut self, input: Var, rows: (usize, usize), cols: (usize, usize)) -> Result<Var> {
        let t = self.value(input);
        let (r, c) = t.dims2();
        if rows.0 >= rows.1 || cols.0 >= cols.1 || rows.1 > r || cols.1 > c {
            return Err(Error::Dimension {
                op: "slice",
                lhs: vec![r, c],
                rhs: vec![rows.0, rows.1, cols.0, cols.1],
            });
        }
        let mut data = Vec::with_capacity((rows.1 - rows.0) * (cols.1 - cols.0));
        for ri in rows.0..rows.1 {
            data.extend_from_slice(&t.row(ri)[cols.0..cols.1]);
        }
        let out = Tensor::new(vec![rows.1 - rows.0, cols.1 - cols.0], data)?;
        let rg = self.rg(input);
        Ok(self.push(out, Op::Slice { input, rows, cols }, rg))
    }

    pub fn rows(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let c = self.value(input).cols();
        self.slice(input, (start, end), (0, c))
    }

    pub fn cols(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let r = self.value(input).rows();
        self.slice(input, (0, r), (start, end))
    }

    fn unary(&mut self, input: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(input);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(input);
        self.push(out, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let t = self.value(input);
        if axis >= t.shape().len() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for {:?}",
                t.shape()
            )));
        }
        let data = kernels::softmax_axis(t.data(), t.shape(), axis);
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(input);
        Ok(self.push(out, Op::Softmax { input, axis }, rg))
    }

    /// Layer normalisation over the last axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let cols = self.value(x).cols();
        if cols < 2 {
            return Err(Error::Contract("layer_norm needs at least two features".into()));
        }
        if self.value(gain).numel() != cols || self.value(bias).numel() != cols {
            return Err(self.dim_err("layer_norm", x, gain));
        }
        let (out, means, rstds) = kernels::layer_norm_rows(
            self.value(x).data(),
            self.value(gain).data(),
            self.value(bias).data(),
            cols,
            eps,
        );
        let out = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                means,
                rstds,
            },
            rg,
        ))
    }

    /// Gathers rows of `table` (`V × d`) into an `n × d` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = t.dims2();
        if ids.is_empty() {
            return Err(Error::Contract("embedding lookup with no ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Contract(format!("embedding id {id} out of range {v}")));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Softmax cross-entropy of `logits` (`T × V`) against per-row targets.
    /// Rows whose target is `None` are ignored.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        reduction: Reduction,
    ) -> Result<Var> {
        let t = self.value(logits);
        let (rows, v) = t.dims2();
        if targets.len() != rows {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = t.data().to_vec();
        let mut total = 0.0;
        let mut count = 0usize;
        for (r, target) in targets.iter().enumerate() {
            let row = &mut probs[r * v..(r + 1) * v];
            if let Some(y) = *target {
                if y >= v {
                    return Err(Error::Contract(format!("target {y} out of range {v}")));
                }
                let mut lp = row.to_vec();
                kernels::log_softmax_in_place(&mut lp);
                total -= lp[y];
                count += 1;
            }
            kernels::softmax_in_place(row);
        }
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean if count > 0 => 1.0 / count as f64,
            Reduction::Mean => 0.0,
        };
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total * scale),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                scale,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let out = self.value(Var(idx));
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2();
                    let n = out.cols();
                    if self.rg(*a) {
                        let da = kernels::matmul_nt(&g, self.value(*b).data(), m, n, k);
                        accumulate(&mut grads, *a, &da);
                    }
                    if self.rg(*b) {
                        let db = kernels::matmul_tn(self.value(*a).data(), &g, m, k, n);
                        accumulate(&mut grads, *b, &db);
                    }
                }
                Op::MatMulNT(a, b) => {
                    let (m, k) = self.value(*a).dims2();
                    let n = out.cols();
                    if self.rg(*a) {
                        let da = kernels::matmul(&g, self.value(*b).data(), m, n, k);
                        accumulate(&mut grads, *a, &da);
                    }
                    if self.rg(*b) {
                        let db = kernels::matmul_tn(&g, self.value(*a).data(), m, n, k);
                        accumulate(&mut grads, *b, &db);
                    }
                }
                Op::Add(a, b, kind) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, &g);
                    }
                    if self.rg(*b) {
                        let db = reduce_broadcast(&g, *kind, self.value(*b).numel());
                        accumulate(&mut grads, *b, &db);
                    }
                }
                Op::Mul(a, b, kind) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    if self.rg(*a) {
                        let da: Vec<f64> = match kind {
                            Broadcast::Same => g.iter().zip(bv).map(|(x, y)| x * y).collect(),
                            Broadcast::Scalar => g.iter().map(|x| x * bv[0]).collect(),
                            Broadcast::Row => {
                                let n = bv.len();
                                g.iter().enumerate().map(|(i, x)| x * bv[i % n]).collect()
                            }
                        };
                        accumulate(&mut grads, *a, &da);
                    }
                    if self.rg(*b) {
                        let prod: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                        let db = reduce_broadcast(&prod, *kind, bv.len());
                        accumulate(&mut grads, *b, &db);
                    }
                }
                Op::Concat { inputs, axis } => {
                    if *axis == 0 {
                        let mut offset = 0;
                        for &v in inputs {
                            let n = self.value(v).numel();
                            if self.rg(v) {
                                accumulate(&mut grads, v, &g[offset..offset + n]);
                            }
                            offset += n;
                        }
                    } else {
                        let total_cols = out.cols();
                        let rows = out.rows();
                        let mut col0 = 0;
                        for &v in inputs {
                            let c = self.value(v).cols();
                            if self.rg(v) {
                                let mut dv = Vec::with_capacity(rows * c);
                                for r in 0..rows {
                                    let start = r * total_cols + col0;
                                    dv.extend_from_slice(&g[start..start + c]);
                                }
                                accumulate(&mut grads, v, &dv);
                            }
                            col0 += c;
                        }
                    }
                }
                Op::Slice { input, rows, cols } => {
                    let src_cols = self.value(*input).cols();
                    let slot = grad_slot(&mut grads, *input, self.value(*input).numel());
                    let w = cols.1 - cols.0;
                    for (i, r) in (rows.0..rows.1).enumerate() {
                        let dst = &mut slot[r * src_cols + cols.0..r * src_cols + cols.1];
                        for (d, s) in dst.iter_mut().zip(&g[i * w..(i + 1) * w]) {
                            *d += s;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(out.data())
                        .map(|(gi, y)| gi * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Tanh(x) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(out.data())
                        .map(|(gi, y)| gi * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Relu(x) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Softmax { input, axis } => {
                    let y = out.data();
                    let (outer, len, inner) = kernels::axis_split(out.shape(), *axis);
                    let mut dx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * len + a) * inner + i;
                            let s: f64 = (0..len).map(|a| g[at(a)] * y[at(a)]).sum();
                            for a in 0..len {
                                dx[at(a)] = y[at(a)] * (g[at(a)] - s);
                            }
                        }
                    }
                    accumulate(&mut grads, *input, &dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    means,
                    rstds,
                } => {
                    let xv = self.value(*x).data();
                    let gv = self.value(*gain).data();
                    let cols = gv.len();
                    let n = cols as f64;
                    let mut dx = vec![0.0; xv.len()];
                    let mut dgain = vec![0.0; cols];
                    let mut dbias = vec![0.0; cols];
                    let mut xhat = vec![0.0; cols];
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..means.len() {
                        let off = r * cols;
                        for c in 0..cols {
                            xhat[c] = (xv[off + c] - means[r]) * rstds[r];
                            dxhat[c] = g[off + c] * gv[c];
                            dgain[c] += g[off + c] * xhat[c];
                            dbias[c] += g[off + c];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            dx[off + c] = rstds[r] / n * (n * dxhat[c] - s1 - xhat[c] * s2);
                        }
                    }
                    if self.rg(*x) {
                        accumulate(&mut grads, *x, &dx);
                    }
                    if self.rg(*gain) {
                        accumulate(&mut grads, *gain, &dgain);
                    }
                    if self.rg(*bias) {
                        accumulate(&mut grads, *bias, &dbias);
                    }
                }
                Op::Embedding { table, ids } => {
                    let d = self.value(*table).cols();
                    let slot = grad_slot(&mut grads, *table, self.value(*table).numel());
                    for (r, &id) in ids.iter().enumerate() {
                        for (dst, src) in slot[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *dst += src;
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    scale,
                } => {
                    let v = self.value(*logits).cols();
                    let mut dl = vec![0.0; probs.len()];
                    let coeff = g[0] * scale;
                    for (r, target) in targets.iter().enumerate() {
                        if let Some(y) = *target {
                            for c in 0..v {
                                dl[r * v + c] = coeff * probs[r * v + c];
                            }
                            dl[r * v + y] -= coeff;
                        }
                    }
                    accumulate(&mut grads, *logits, &dl);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).numel();
                    accumulate(&mut grads, *x, &vec![g[0]; n]);
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        })
    }
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn reduce_broadcast(g: &[f64], kind: Broadcast, n: usize) -> Vec<f64> {
    match kind {
        Broadcast::Same => g.to_vec(),
        Broadcast::Scalar => vec![g.iter().sum()],
        Broadcast::Row => {
            let mut out = vec![0.0; n];
            for (i, x) in g.iter().enumerate() {
                out[i % n] += x;
            }
            out
        }
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    param_vars: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient flowing into `v`, if any reached it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for one stored parameter; `None` when the loss did not reach it.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.param_vars[id.index()].and_then(|v| self.wrt(v))
    }

    /// Dense per-parameter gradients, zero where unreachable.
    pub fn param_tensors(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .ids()
            .map(|id| {
                let shape = store.get(id).shape();
                match self.param(id) {
                    Some(g) => Tensor::new(shape.to_vec(), g.to_vec()).expect("gradient shape"),
                    None => Tensor::zeros(shape),
                }
            })
            .collect()
    }

    /// Adds `scale ·` this gradient into an accumulator shaped like the store.
    pub fn accumulate_into(&self, acc: &mut [Tensor], scale: f64) {
        for (i, slot) in acc.iter_mut().enumerate() {
            if let Some(g) = self.param(ParamId(i)) {
                for (a, b) in slot.data_mut().iter_mut().zip(g) {
                    *a += scale * b;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert(name, t).unwrap();
        (s, id)
    }

    #[test]
    fn matmul_identity_and_selector() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let i2 = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let m = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let sel = g.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let col = g.constant(Tensor::from_rows(&[vec![2.0], vec![5.0]]).unwrap());
        let p = g.matmul(sel, col).unwrap();
        assert_eq!(g.value(p).shape(), &[1, 1]);
        assert_eq!(g.value(p).data(), &[2.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn softmax_symmetric_and_shift_safe() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::row_vector(vec![0.0, 0.0]));
        let y = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
        let x = g.constant(Tensor::row_vector(vec![1000.0, 1000.0]));
        let y = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_constant_and_two_point() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let gain = g.constant(Tensor::filled(&[1, 3], 1.0));
        let bias = g.constant(Tensor::zeros(&[1, 3]));
        let x = g.constant(Tensor::row_vector(vec![5.0, 5.0, 5.0]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);

        let gain = g.constant(Tensor::filled(&[1, 2], 1.0));
        let bias = g.constant(Tensor::zeros(&[1, 2]));
        let x = g.constant(Tensor::row_vector(vec![1.0, 3.0]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        // variance 1, so the eps correction is 1/sqrt(1 + 1e-5)
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        let out = g.value(y).data();
        assert!((out[0] + expect).abs() < 1e-12);
        assert!((out[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn backward_of_sum_and_square() {
        let (s, w) = store_with("w", Tensor::row_vector(vec![0.3, -1.0, 2.0]));
        let mut g = Graph::new(&s);
        let wv = g.param(w);
        let loss = g.sum(wv);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(w).unwrap(), &[1.0, 1.0, 1.0]);

        let (s, w) = store_with("w", Tensor::row_vector(vec![1.0, 2.0]));
        let mut g = Graph::new(&s);
        let wv = g.param(w);
        let sq = g.mul(wv, wv).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let (s, w) = store_with("w", Tensor::row_vector(vec![1.0, 2.0]));
        let mut g = Graph::new(&s);
        let wv = g.param(w);
        assert!(matches!(g.backward(wv), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_parameters_get_zero() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::row_vector(vec![1.0])).unwrap();
        let b = s.insert("b", Tensor::row_vector(vec![1.0, 1.0])).unwrap();
        let mut g = Graph::new(&s);
        let av = g.param(a);
        let _bv = g.param(b);
        let loss = g.sum(av);
        let grads = g.backward(loss).unwrap();
        let dense = grads.param_tensors(&s);
        assert_eq!(dense[b.index()].data(), &[0.0, 0.0]);
        assert_eq!(dense[a.index()].data(), &[1.0]);
    }

    #[test]
    fn cross_entropy_ignores_unscored_rows() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let logits = g.input(Tensor::from_rows(&[vec![0.0, 0.0], vec![5.0, -3.0]]).unwrap());
        let loss = g.cross_entropy(logits, &[Some(0), None], Reduction::Mean).unwrap();
        assert!((g.value(loss).data()[0] - 2f64.ln()).abs() < 1e-15);
        let grads = g.backward(loss).unwrap();
        assert_eq!(&grads.wrt(logits).unwrap()[2..], &[0.0, 0.0]);
    }
}
