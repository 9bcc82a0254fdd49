//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so walking the tape backwards
//! visits each node after all of its consumers; [`Graph::backward`] relies on
//! that to propagate adjoints in a single pass.
//!
//! ```
//! use caf_core::autodiff::Graph;
//! use caf_core::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.constant(Tensor::row_vector(vec![1.0, -2.0]));
//! let y = g.matmul_t(x, x).unwrap(); // x x^T = 5
//! let grads = g.backward(y).unwrap();
//! assert_eq!(g.value(y).get(0, 0), 5.0);
//! assert_eq!(grads.of(x).unwrap().data(), &[2.0, -4.0]);
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mask::MaskMatrix;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Logit assigned to forbidden cells before the row softmax.
pub const MASKED_LOGIT: f64 = -1e9;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Vec<f64>),
    MulConst(Var, Tensor),
    Elu(Var),
    Softmax(Var),
    Reshape(Var),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Sum(Var),
    Pinball {
        pred: Var,
        targets: Vec<f64>,
        quantiles: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Adjoints of every node with respect to the differentiated scalar.
#[derive(Debug)]
pub struct Grads {
    per_node: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.per_node.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&delta),
        None => *slot = Some(delta),
    }
}

/// Row-wise softmax that assigns exactly zero to forbidden cells.
///
/// Forbidden logits are replaced with [`MASKED_LOGIT`] before exponentiation;
/// the surviving weights are then hard-zeroed at forbidden cells and the row is
/// renormalised, so rows sum to one over permitted columns.
pub fn masked_softmax(logits: &Tensor, mask: Option<&MaskMatrix>) -> Result<Tensor> {
    let (n, m) = logits.shape();
    if let Some(mask) = mask {
        if mask.shape() != (n, m) {
            return Err(Error::shape(format!(
                "mask {:?} does not match logits {:?}",
                mask.shape(),
                (n, m)
            )));
        }
    }
    let mut out = Tensor::zeros(n, m);
    let mut buf = vec![0.0; m];
    for i in 0..n {
        let permit = |j: usize| mask.map_or(true, |mk| mk.permits(i, j));
        let row = logits.row(i);
        if !(0..m).any(permit) {
            return Err(Error::Mask(format!("row {i} forbids every column")));
        }
        let mut max = f64::NEG_INFINITY;
        for j in 0..m {
            buf[j] = if permit(j) { row[j] } else { MASKED_LOGIT };
            max = max.max(buf[j]);
        }
        let mut total = 0.0;
        for j in 0..m {
            buf[j] = if permit(j) { (buf[j] - max).exp() } else { 0.0 };
            total += buf[j];
        }
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::Numeric(format!("softmax row {i} has no finite mass")));
        }
        let out_row = out.row_mut(i);
        for j in 0..m {
            out_row[j] = buf[j] / total;
        }
    }
    Ok(out)
}

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf for the stored parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(id) {
            return Ok(v);
        }
        let value = store.get(id)?.clone();
        let v = self.push(value, Op::Leaf);
        self.params.insert(id.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let out = va.matmul(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::shape(format!(
                "matmul_t {:?} x {:?}^T",
                va.shape(),
                vb.shape()
            )));
        }
        let out = va.matmul_t(vb);
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(format!("add {:?} + {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(Error::shape(format!(
                "add_row {:?} + {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = va.clone();
        for i in 0..out.rows() {
            for (o, &x) in out.row_mut(i).iter_mut().zip(vb.data()) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    /// Multiplies row `i` of `a` by the constant `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Vec<f64>) -> Result<Var> {
        let va = self.value(a);
        if s.len() != va.rows() {
            return Err(Error::shape(format!(
                "scale_rows: {} factors for {} rows",
                s.len(),
                va.rows()
            )));
        }
        let mut out = va.clone();
        for (i, &f) in s.iter().enumerate() {
            for o in out.row_mut(i) {
                *o *= f;
            }
        }
        Ok(self.push(out, Op::ScaleRows(a, s)))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let va = self.value(a);
        if va.shape() != c.shape() {
            return Err(Error::shape(format!("mul_const {:?} * {:?}", va.shape(), c.shape())));
        }
        let mut out = va.clone();
        for (o, &m) in out.data_mut().iter_mut().zip(c.data()) {
            *o *= m;
        }
        Ok(self.push(out, Op::MulConst(a, c)))
    }

    /// Exponential linear unit, `x` for `x > 0` and `exp(x) - 1` otherwise.
    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(out, Op::Elu(a))
    }

    /// Row softmax, optionally masked (see [`masked_softmax`]).
    pub fn softmax(&mut self, a: Var, mask: Option<&MaskMatrix>) -> Result<Var> {
        let out = masked_softmax(self.value(a), mask)?;
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Row-major reinterpretation with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).reshaped(rows, cols)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if len == 0 || start + len > va.rows() {
            return Err(Error::shape(format!(
                "slice_rows {start}..{} of {} rows",
                start + len,
                va.rows()
            )));
        }
        let c = va.cols();
        let out = Tensor::from_vec(len, c, va.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Stacks the operands vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows of nothing"))?;
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != c {
                return Err(Error::shape(format!(
                    "concat_rows: {} columns vs {c}",
                    v.cols()
                )));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::from_vec(rows, c, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Gathers rows of `table` by index (embedding lookup).
    pub fn select_rows(&mut self, table: Var, indices: Vec<usize>) -> Result<Var> {
        let vt = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vt.rows()) {
            return Err(Error::shape(format!(
                "select_rows index {bad} of {} rows",
                vt.rows()
            )));
        }
        let c = vt.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in &indices {
            data.extend_from_slice(vt.row(i));
        }
        let out = Tensor::from_vec(indices.len(), c, data)?;
        Ok(self.push(out, Op::SelectRows(table, indices)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Sum of quantile (pinball) losses. `pred` is `horizon x |Q|`, entry
    /// `(k, j)` the forecast of quantile `quantiles[j]` for `targets[k]`.
    pub fn pinball(&mut self, pred: Var, targets: Vec<f64>, quantiles: Vec<f64>) -> Result<Var> {
        let vp = self.value(pred);
        if vp.rows() != targets.len() || vp.cols() != quantiles.len() {
            return Err(Error::shape(format!(
                "pinball: forecasts {:?} vs {} targets x {} quantiles",
                vp.shape(),
                targets.len(),
                quantiles.len()
            )));
        }
        let mut total = 0.0;
        for (k, &y) in targets.iter().enumerate() {
            for (j, &q) in quantiles.iter().enumerate() {
                let yhat = vp.get(k, j);
                let below = if y < yhat { 1.0 } else { 0.0 };
                total += (q - below) * (y - yhat);
            }
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::Pinball {
                pred,
                targets,
                quantiles,
            },
        ))
    }

    /// Adjoints of every node with respect to the `1 x 1` node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.t_matmul(self.value(*a));
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::AddRow(a, b) => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, &x) in db.data_mut().iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads[b.0], db);
                    accumulate(&mut grads[a.0], g.clone());
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads[a.0], g.map(|x| x * s));
                }
                Op::ScaleRows(a, s) => {
                    let mut da = g.clone();
                    for (i, &f) in s.iter().enumerate() {
                        for d in da.row_mut(i) {
                            *d *= f;
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                }
                Op::MulConst(a, c) => {
                    let mut da = g.clone();
                    for (d, &m) in da.data_mut().iter_mut().zip(c.data()) {
                        *d *= m;
                    }
                    accumulate(&mut grads[a.0], da);
                }
                Op::Elu(a) => {
                    let x = self.value(*a);
                    let mut da = g.clone();
                    for (d, &xv) in da.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *d *= xv.exp();
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut da = Tensor::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (d, (&yv, &gv)) in da.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                            *d = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads[a.0], g.reshaped(r, c)?);
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.value(*a).shape();
                    let mut da = Tensor::zeros(r, c);
                    da.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads[a.0], da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        let (r, c) = self.value(*p).shape();
                        let piece = Tensor::from_vec(r, c, g.data()[offset..offset + n].to_vec())?;
                        offset += n;
                        accumulate(&mut grads[p.0], piece);
                    }
                }
                Op::SelectRows(table, indices) => {
                    let (r, c) = self.value(*table).shape();
                    let mut dt = Tensor::zeros(r, c);
                    for (k, &i) in indices.iter().enumerate() {
                        for (d, &x) in dt.row_mut(i).iter_mut().zip(g.row(k)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads[table.0], dt);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads[a.0], Tensor::filled(r, c, g.get(0, 0)));
                }
                Op::Pinball {
                    pred,
                    targets,
                    quantiles,
                } => {
                    let vp = self.value(*pred);
                    let upstream = g.get(0, 0);
                    let dp = Tensor::from_fn(vp.rows(), vp.cols(), |k, j| {
                        let below = if targets[k] < vp.get(k, j) { 1.0 } else { 0.0 };
                        -(quantiles[j] - below) * upstream
                    });
                    accumulate(&mut grads[pred.0], dp);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Grads { per_node: grads })
    }

    /// Collects adjoints of bound parameters into a store shaped like `store`;
    /// parameters that did not influence the loss get zeros.
    pub fn param_grads(&self, grads: &Grads, store: &ParamStore) -> ParamStore {
        let mut out = store.zeros_like();
        for (id, t) in out.iter_mut() {
            if let Some(g) = self.params.get(id).and_then(|&v| grads.of(v)) {
                *t = g.clone();
            }
        }
        out
    }
}
