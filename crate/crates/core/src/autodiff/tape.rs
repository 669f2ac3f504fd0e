use std::collections::HashMap;

use super::{AutodiffError, Gradients, ParamSet, Tensor};

/// Additive constant used for masked attention logits.
pub const MASK_NEG: f64 = -1e9;

/// Probabilities below this are clamped to exactly zero after a softmax.
const ZERO_CLAMP: f64 = 1e-300;

const RMS_EPS: f64 = 1e-6;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Ln(Var),
    RmsNormRows(Var),
    Embedding(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    AddMask(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    Reshape(Var),
    Pick(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records primitive operations so that [`Tape::backward`] can replay them in reverse.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    #[cfg(test)]
    pub(crate) corrupt_tanh: bool,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize), AutodiffError> {
    if t.shape().len() != 2 {
        return Err(AutodiffError::ShapeMismatch {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
        if *x < ZERO_CLAMP {
            *x = 0.0;
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(delta) {
                *a += b;
            }
        }
        None => *slot = Some(delta.to_vec()),
    }
}

fn accumulate_with(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
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

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// Leaf for the parameter at `index` of `params`; repeated calls return the same leaf.
    pub fn param_at(&mut self, params: &ParamSet, index: usize) -> Var {
        if let Some(&v) = self.params.get(&index) {
            return v;
        }
        let v = self.push(params.value_at(index).clone(), Op::Param(index));
        self.params.insert(index, v);
        v
    }

    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var, AutodiffError> {
        let index = params
            .index_of(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        Ok(self.param_at(params, index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.val(a), self.val(b));
        let (m, k) = require_matrix("matmul", ta)?;
        let (k2, n) = require_matrix("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += x * bv;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.val(a), self.val(b));
        let (m, k) = require_matrix("matmul_t", ta)?;
        let (n, k2) = require_matrix("matmul_t", tb)?;
        if k != k2 {
            return Err(mismatch("matmul_t", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bd[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulT(a, b)))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        record: Op,
    ) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), record))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn zip_row(
        &mut self,
        op: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
        record: Op,
    ) -> Result<Var, AutodiffError> {
        let (ta, tr) = (self.val(a), self.val(row));
        let (m, n) = require_matrix(op, ta)?;
        if tr.shape() != [1, n] {
            return Err(mismatch(op, ta, tr));
        }
        let rd = tr.data();
        let mut data = ta.data().to_vec();
        for i in 0..m {
            for (x, &r) in data[i * n..(i + 1) * n].iter_mut().zip(rd) {
                *x = f(*x, r);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], data), record))
    }

    /// Adds a 1×n row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        self.zip_row("add_row", a, row, |x, r| x + r, Op::AddRow(a, row))
    }

    /// Multiplies every row of an m×n matrix elementwise by a 1×n row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        self.zip_row("mul_row", a, row, |x, r| x * r, Op::MulRow(a, row))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, record: Op) -> Var {
        let ta = self.val(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), record)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Ln(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.val(a);
        let (m, n) = require_matrix("softmax_rows", ta)?;
        let mut data = ta.data().to_vec();
        for i in 0..m {
            softmax_in_place(&mut data[i * n..(i + 1) * n]);
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::SoftmaxRows(a)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.val(a);
        let (m, n) = require_matrix("log_softmax_rows", ta)?;
        let mut data = ta.data().to_vec();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::LogSoftmaxRows(a)))
    }

    /// Scales each row to unit root-mean-square.
    pub fn rms_norm_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.val(a);
        let (m, n) = require_matrix("rms_norm_rows", ta)?;
        let mut data = ta.data().to_vec();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let r = (row.iter().map(|x| x * x).sum::<f64>() / n as f64 + RMS_EPS).sqrt();
            for x in row.iter_mut() {
                *x /= r;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::RmsNormRows(a)))
    }

    /// Gathers rows of `table` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let tt = self.val(table);
        let (rows, d) = require_matrix("embedding", tt)?;
        if ids.is_empty() {
            return Err(AutodiffError::Empty("embedding"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    len: rows,
                });
            }
            data.extend_from_slice(tt.row_slice(id));
        }
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], data),
            Op::Embedding(table, ids.to_vec()),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.val(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Column-wise mean over rows: m×n → 1×n.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.val(a);
        let (m, n) = require_matrix("mean_rows", ta)?;
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, x) in out.iter_mut().zip(ta.row_slice(i)) {
                *o += x;
            }
        }
        for o in out.iter_mut() {
            *o /= m as f64;
        }
        Ok(self.push(Tensor::from_parts(vec![1, n], out), Op::MeanRows(a)))
    }

    /// Adds a constant 0/[`MASK_NEG`] mask; `allowed[i]` false masks entry `i`.
    pub fn add_mask(&mut self, a: Var, allowed: &[bool]) -> Result<Var, AutodiffError> {
        let ta = self.val(a);
        if ta.len() != allowed.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_mask",
                left: ta.shape().to_vec(),
                right: vec![allowed.len()],
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(allowed)
            .map(|(&x, &ok)| if ok { x } else { x + MASK_NEG })
            .collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddMask(a)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or(AutodiffError::Empty("concat_rows"))?;
        let (_, n) = require_matrix("concat_rows", self.val(*first))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.val(p);
            let (m, n2) = require_matrix("concat_rows", t)?;
            if n2 != n {
                return Err(mismatch("concat_rows", self.val(*first), t));
            }
            rows += m;
            data.extend_from_slice(t.data());
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, n], data),
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or(AutodiffError::Empty("concat_cols"))?;
        let (m, _) = require_matrix("concat_cols", self.val(*first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.val(p);
            let (m2, n) = require_matrix("concat_cols", t)?;
            if m2 != m {
                return Err(mismatch("concat_cols", self.val(*first), t));
            }
            widths.push(n);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.val(p).row_slice(i));
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![m, total], data),
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let ta = self.val(a);
        let (m, n) = require_matrix("slice_rows", ta)?;
        if len == 0 || start + len > m {
            return Err(AutodiffError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                len: m,
            });
        }
        let data = ta.data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(
            Tensor::from_parts(vec![len, n], data),
            Op::SliceRows(a, start),
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let ta = self.val(a);
        if shape.iter().product::<usize>() != ta.len() || shape.contains(&0) {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                left: ta.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let data = ta.data().to_vec();
        Ok(self.push(Tensor::from_parts(shape.to_vec(), data), Op::Reshape(a)))
    }

    /// Scalar at flat index.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var, AutodiffError> {
        let ta = self.val(a);
        if index >= ta.len() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "pick",
                index,
                len: ta.len(),
            });
        }
        let v = ta.data()[index];
        Ok(self.push(Tensor::scalar(v), Op::Pick(a, index)))
    }

    /// Reverse-mode sweep from a scalar `root`, returning gradients for every
    /// parameter of `params` (zero where unreachable).
    pub fn backward(&self, root: Var, params: &ParamSet) -> Result<Gradients, AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        let root_shape = self.val(root).shape().to_vec();
        if !self.val(root).is_scalar() {
            return Err(AutodiffError::NonScalarRoot(root_shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        let mut out = Gradients::zeros_like(params);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => out.accumulate(*p, &g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.val(*a), self.val(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    let (ad, bd) = (ta.data(), tb.data());
                    accumulate_with(&mut grads[a.0], m * k, |ga| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bd[p * n..(p + 1) * n];
                                ga[i * k + p] +=
                                    grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                    accumulate_with(&mut grads[b.0], k * n, |gb| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let x = ad[i * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *o += x * gv;
                                }
                            }
                        }
                    });
                }
                Op::MatMulT(a, b) => {
                    let (ta, tb) = (self.val(*a), self.val(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[0];
                    let (ad, bd) = (ta.data(), tb.data());
                    accumulate_with(&mut grads[a.0], m * k, |ga| {
                        for i in 0..m {
                            for j in 0..n {
                                let gv = g[i * n + j];
                                if gv == 0.0 {
                                    continue;
                                }
                                for (o, bv) in ga[i * k..(i + 1) * k]
                                    .iter_mut()
                                    .zip(&bd[j * k..(j + 1) * k])
                                {
                                    *o += gv * bv;
                                }
                            }
                        }
                    });
                    accumulate_with(&mut grads[b.0], n * k, |gb| {
                        for i in 0..m {
                            for j in 0..n {
                                let gv = g[i * n + j];
                                if gv == 0.0 {
                                    continue;
                                }
                                for (o, av) in gb[j * k..(j + 1) * k]
                                    .iter_mut()
                                    .zip(&ad[i * k..(i + 1) * k])
                                {
                                    *o += gv * av;
                                }
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    accumulate(&mut grads[b.0], &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(&mut grads[b.0], &neg);
                }
                Op::AddRow(a, r) => {
                    let n = self.val(*r).len();
                    accumulate(&mut grads[a.0], &g);
                    accumulate_with(&mut grads[r.0], n, |gr| {
                        for chunk in g.chunks(n) {
                            for (o, x) in gr.iter_mut().zip(chunk) {
                                *o += x;
                            }
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.val(*a).data(), self.val(*b).data());
                    let ga: Vec<f64> = g.iter().zip(bd).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(ad).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[a.0], &ga);
                    accumulate(&mut grads[b.0], &gb);
                }
                Op::MulRow(a, r) => {
                    let (ad, rd) = (self.val(*a).data(), self.val(*r).data());
                    let n = rd.len();
                    let ga: Vec<f64> = g.iter().enumerate().map(|(i, x)| x * rd[i % n]).collect();
                    accumulate(&mut grads[a.0], &ga);
                    accumulate_with(&mut grads[r.0], n, |gr| {
                        for (gc, ac) in g.chunks(n).zip(ad.chunks(n)) {
                            for j in 0..n {
                                gr[j] += gc[j] * ac[j];
                            }
                        }
                    });
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    #[allow(unused_mut)]
                    let mut ga: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(gv, yv)| gv * (1.0 - yv * yv))
                        .collect();
                    #[cfg(test)]
                    if self.corrupt_tanh {
                        for x in ga.iter_mut() {
                            *x *= 1.01;
                        }
                    }
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::Relu(a) => {
                    let x = self.val(*a).data();
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut ga = vec![0.0; y.len()];
                    for (i, (yr, gr)) in y.data().chunks(n).zip(g.chunks(n)).enumerate() {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..n {
                            ga[i * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut ga = vec![0.0; y.len()];
                    for (i, (yr, gr)) in y.data().chunks(n).zip(g.chunks(n)).enumerate() {
                        let total: f64 = gr.iter().sum();
                        for j in 0..n {
                            ga[i * n + j] = gr[j] - yr[j].exp() * total;
                        }
                    }
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::Ln(a) => {
                    let x = self.val(*a).data();
                    let ga: Vec<f64> = g.iter().zip(x).map(|(gv, xv)| gv / xv).collect();
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::RmsNormRows(a) => {
                    let x = self.val(*a);
                    let y = node.value.data();
                    let n = x.cols();
                    let mut ga = vec![0.0; x.len()];
                    for i in 0..x.rows() {
                        let xr = x.row_slice(i);
                        let r = (xr.iter().map(|v| v * v).sum::<f64>() / n as f64 + RMS_EPS).sqrt();
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f64 =
                            yr.iter().zip(gr).map(|(p, q)| p * q).sum::<f64>() / n as f64;
                        for j in 0..n {
                            ga[i * n + j] = (gr[j] - yr[j] * dot) / r;
                        }
                    }
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::Embedding(table, ids) => {
                    let tt = self.val(*table);
                    let d = tt.cols();
                    accumulate_with(&mut grads[table.0], tt.len(), |gt| {
                        for (row, &id) in ids.iter().enumerate() {
                            for (o, x) in gt[id * d..(id + 1) * d]
                                .iter_mut()
                                .zip(&g[row * d..(row + 1) * d])
                            {
                                *o += x;
                            }
                        }
                    });
                }
                Op::Sum(a) => {
                    let n = self.val(*a).len();
                    let g0 = g[0];
                    accumulate_with(&mut grads[a.0], n, |ga| {
                        for o in ga.iter_mut() {
                            *o += g0;
                        }
                    });
                }
                Op::Mean(a) => {
                    let n = self.val(*a).len();
                    let g0 = g[0] / n as f64;
                    accumulate_with(&mut grads[a.0], n, |ga| {
                        for o in ga.iter_mut() {
                            *o += g0;
                        }
                    });
                }
                Op::MeanRows(a) => {
                    let ta = self.val(*a);
                    let (m, n) = (ta.rows(), ta.cols());
                    accumulate_with(&mut grads[a.0], m * n, |ga| {
                        for i in 0..m {
                            for j in 0..n {
                                ga[i * n + j] += g[j] / m as f64;
                            }
                        }
                    });
                }
                Op::AddMask(a) => accumulate(&mut grads[a.0], &g),
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.val(*p).len();
                        accumulate(&mut grads[p.0], &g[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let mut col = 0;
                    for p in parts {
                        let t = self.val(*p);
                        let (m, n) = (t.rows(), t.cols());
                        accumulate_with(&mut grads[p.0], m * n, |gp| {
                            for i in 0..m {
                                for j in 0..n {
                                    gp[i * n + j] += g[i * total + col + j];
                                }
                            }
                        });
                        col += n;
                    }
                }
                Op::SliceRows(a, start) => {
                    let ta = self.val(*a);
                    let n = ta.cols();
                    let len = ta.len();
                    accumulate_with(&mut grads[a.0], len, |ga| {
                        for (o, x) in ga[start * n..start * n + g.len()].iter_mut().zip(&g) {
                            *o += x;
                        }
                    });
                }
                Op::Reshape(a) => accumulate(&mut grads[a.0], &g),
                Op::Pick(a, index) => {
                    let len = self.val(*a).len();
                    let g0 = g[0];
                    accumulate_with(&mut grads[a.0], len, |ga| ga[*index] += g0);
                }
            }
        }
        Ok(out)
    }
}
