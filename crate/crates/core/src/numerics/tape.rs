//! Minimal matrix-valued reverse-mode tape.
//!
//! Every learned component builds its forward pass on a [`Tape`]. Values are
//! computed eagerly; [`Tape::backward`] then walks the recorded nodes in
//! reverse and returns the adjoint of every node. Parameters are bound by
//! name from a [`ParamStore`] once per tape, so a parameter reused across an
//! unrolled sequence accumulates its gradient from every use.

use std::collections::HashMap;

use super::matrix::{dot, norm, Matrix};
use super::ops::{sigmoid, softmax_unchecked, COSINE_ZERO_NORM, LAYER_NORM_EPS};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Carries the node's shape so callers can
/// validate without touching the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    MeanRows(usize),
    Sum(usize),
    CosineRows(usize, usize),
    /// Scalar whose gradient with respect to `input` was computed in closed
    /// form during the forward pass.
    Fused { input: usize, grad: Matrix },
}

/// Recorded computation.
pub struct Tape {
    values: Vec<Matrix>,
    ops: Vec<Op>,
    params: HashMap<String, Var>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let var = Var {
            id: self.values.len(),
            rows: value.rows(),
            cols: value.cols(),
        };
        self.values.push(value);
        self.ops.push(op);
        var
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.id]
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.id].get(0, 0)
    }

    /// Inserts a value that receives no gradient bookkeeping beyond its node.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds the named parameter, reusing the existing node if already bound.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let value = store
            .value(name)
            .ok_or_else(|| Error::State(format!("unknown parameter {name:?}")))?
            .clone();
        let v = self.push(value, Op::Leaf);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.values[a.id].matmul(&self.values[b.id])?;
        Ok(self.push(out, Op::MatMul(a.id, b.id)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.values[a.id].matmul_nt(&self.values[b.id])?;
        Ok(self.push(out, Op::MatMulNt(a.id, b.id)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.shape() != b.shape() {
            return Err(Error::shape(format!(
                "add {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut out = self.values[a.id].clone();
        out.add_assign(&self.values[b.id]);
        Ok(self.push(out, Op::Add(a.id, b.id)))
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        if b.rows != 1 || b.cols != a.cols {
            return Err(Error::shape(format!(
                "broadcast row {:?} onto {:?}",
                b.shape(),
                a.shape()
            )));
        }
        let mut out = self.values[a.id].clone();
        let bias = self.values[b.id].as_slice().to_vec();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(a.id, b.id)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.shape() != b.shape() {
            return Err(Error::shape("elementwise product of unequal shapes"));
        }
        let bv = &self.values[b.id];
        let data = self.values[a.id]
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(x, y)| x * y)
            .collect();
        let out = Matrix::from_vec(a.rows, a.cols, data)?;
        Ok(self.push(out, Op::Mul(a.id, b.id)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.values[a.id].scale(s);
        self.push(out, Op::Scale(a.id, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.values[a.id].map(|v| v.max(0.0));
        self.push(out, Op::Relu(a.id))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.values[a.id].map(sigmoid);
        self.push(out, Op::Sigmoid(a.id))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = &self.values[a.id];
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            if x.cols() > 0 {
                out.row_mut(r).copy_from_slice(&softmax_unchecked(x.row(r)));
            }
        }
        self.push(out, Op::SoftmaxRows(a.id))
    }

    /// Row-wise LayerNorm (ε = 1e−5) with `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        if gain.shape() != (1, x.cols) || bias.shape() != (1, x.cols) {
            return Err(Error::shape("layer norm parameters must be 1 x width"));
        }
        let xv = &self.values[x.id];
        let g = self.values[gain.id].as_slice();
        let b = self.values[bias.id].as_slice();
        let n = x.cols as f64;
        let mut out = Matrix::zeros(x.rows, x.cols);
        let mut xhat = vec![0.0; x.rows * x.cols];
        let mut inv_std = vec![0.0; x.rows];
        for r in 0..x.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            let orow = out.row_mut(r);
            for c in 0..x.cols {
                let h = (row[c] - mean) * inv;
                xhat[r * x.cols + c] = h;
                orow[c] = h * g[c] + b[c];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
        ))
    }

    /// Stacks the inputs vertically. All parts must share a width; empty
    /// parts (zero rows) are allowed.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero parts"))?
            .cols;
        if parts.iter().any(|p| p.cols != cols) {
            return Err(Error::shape("concat_rows with differing widths"));
        }
        let rows: usize = parts.iter().map(|p| p.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(self.values[p.id].as_slice());
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.iter().map(|p| p.id).collect())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero parts"))?
            .rows;
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::shape("concat_cols with differing heights"));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let v = &self.values[p.id];
            for r in 0..rows {
                out.row_mut(r)[offset..offset + p.cols].copy_from_slice(v.row(r));
            }
            offset += p.cols;
        }
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.id).collect())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > a.rows {
            return Err(Error::shape(format!(
                "rows {start}..{} of a {}-row matrix",
                start + len,
                a.rows
            )));
        }
        let out = self.values[a.id].slice_rows(start, len);
        Ok(self.push(out, Op::SliceRows(a.id, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > a.cols {
            return Err(Error::shape(format!(
                "cols {start}..{} of a {}-col matrix",
                start + len,
                a.cols
            )));
        }
        let x = &self.values[a.id];
        let mut out = Matrix::zeros(a.rows, len);
        for r in 0..a.rows {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols(a.id, start)))
    }

    /// Column means, `m × n → 1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        if a.rows == 0 {
            return Err(Error::invalid("mean over zero rows"));
        }
        let x = &self.values[a.id];
        let mut out = Matrix::zeros(1, a.cols);
        for r in 0..a.rows {
            for (o, v) in out.row_mut(0).iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        let out = out.scale(1.0 / a.rows as f64);
        Ok(self.push(out, Op::MeanRows(a.id)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values[a.id].as_slice().iter().sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a.id))
    }

    /// Cosine similarity of every row of `rows` (`k × d`) against the single
    /// row `target` (`1 × d`), as a `1 × k` row. Zero-norm pairs give 0.
    pub fn cosine_rows(&mut self, rows: Var, target: Var) -> Result<Var> {
        if target.rows != 1 || target.cols != rows.cols {
            return Err(Error::shape(format!(
                "cosine of {:?} rows against {:?}",
                rows.shape(),
                target.shape()
            )));
        }
        let s = &self.values[rows.id];
        let g = self.values[target.id].as_slice();
        let ng = norm(g);
        let mut out = Matrix::zeros(1, rows.rows);
        for i in 0..rows.rows {
            let si = s.row(i);
            let ns = norm(si);
            if ns >= COSINE_ZERO_NORM && ng >= COSINE_ZERO_NORM {
                out.set(0, i, dot(si, g) / (ns * ng));
            }
        }
        Ok(self.push(out, Op::CosineRows(rows.id, target.id)))
    }

    /// Records a scalar `value` whose gradient with respect to `input` is the
    /// precomputed `grad` (same shape as `input`).
    pub fn fused_scalar(&mut self, input: Var, value: f64, grad: Matrix) -> Result<Var> {
        if grad.shape() != input.shape() {
            return Err(Error::shape("fused gradient shape differs from input"));
        }
        Ok(self.push(
            Matrix::filled(1, 1, value),
            Op::Fused {
                input: input.id,
                grad,
            },
        ))
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if output.shape() != (1, 1) {
            return Err(Error::shape("backward needs a scalar output"));
        }
        self.backward_seeded(output, Matrix::filled(1, 1, 1.0))
    }

    pub fn backward_seeded(&self, output: Var, seed: Matrix) -> Result<Gradients> {
        if seed.shape() != output.shape() {
            return Err(Error::shape("seed shape differs from output"));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.id + 1];
        grads[output.id] = Some(seed);
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let vals = &self.values;
        match &self.ops[id] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.matmul_nt(&vals[*b])?;
                let db = vals[*a].matmul_tn(g)?;
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::MatMulNt(a, b) => {
                let da = g.matmul(&vals[*b])?;
                let db = g.matmul_tn(&vals[*a])?;
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                accumulate(grads, *a, g.clone());
                let mut db = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, v) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                accumulate(grads, *b, db);
            }
            Op::Mul(a, b) => {
                let da = elementwise(g, &vals[*b], |x, y| x * y);
                let db = elementwise(g, &vals[*a], |x, y| x * y);
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::Relu(a) => {
                let da = elementwise(g, &vals[*a], |d, x| if x > 0.0 { d } else { 0.0 });
                accumulate(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let da = elementwise(g, &vals[id], |d, y| d * y * (1.0 - y));
                accumulate(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let y = &vals[id];
                let mut da = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner = dot(yr, gr);
                    for (c, d) in da.row_mut(r).iter_mut().enumerate() {
                        *d = yr[c] * (gr[c] - inner);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = g.shape();
                let gv = vals[*gain].as_slice();
                let mut dgain = Matrix::zeros(1, cols);
                let mut dbias = Matrix::zeros(1, cols);
                let mut dx = Matrix::zeros(rows, cols);
                let n = cols as f64;
                for r in 0..rows {
                    let gr = g.row(r);
                    let hr = &xhat[r * cols..(r + 1) * cols];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for c in 0..cols {
                        dgain.as_mut_slice()[c] += gr[c] * hr[c];
                        dbias.as_mut_slice()[c] += gr[c];
                        let dh = gr[c] * gv[c];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[c];
                    }
                    let inv = inv_std[r];
                    let dxr = dx.row_mut(r);
                    for c in 0..cols {
                        let dh = gr[c] * gv[c];
                        dxr[c] = inv / n * (n * dh - sum_dh - hr[c] * sum_dh_h);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gain, dgain);
                accumulate(grads, *bias, dbias);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = vals[p].rows();
                    accumulate(grads, p, g.slice_rows(offset, rows));
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = vals[p].cols();
                    let mut dp = Matrix::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    accumulate(grads, p, dp);
                    offset += cols;
                }
            }
            Op::SliceRows(a, start) => {
                let src = &vals[*a];
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    da.row_mut(start + r).copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, da);
            }
            Op::SliceCols(a, start) => {
                let src = &vals[*a];
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    da.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, da);
            }
            Op::MeanRows(a) => {
                let src = &vals[*a];
                let inv = 1.0 / src.rows() as f64;
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for r in 0..src.rows() {
                    for (d, v) in da.row_mut(r).iter_mut().zip(g.row(0)) {
                        *d = v * inv;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Sum(a) => {
                let src = &vals[*a];
                accumulate(grads, *a, Matrix::filled(src.rows(), src.cols(), g.get(0, 0)));
            }
            Op::CosineRows(rows, target) => {
                let s = &vals[*rows];
                let gt = vals[*target].as_slice();
                let u = &vals[id];
                let ng = norm(gt);
                let mut ds = Matrix::zeros(s.rows(), s.cols());
                let mut dg = Matrix::zeros(1, s.cols());
                for i in 0..s.rows() {
                    let si = s.row(i);
                    let ns = norm(si);
                    if ns < COSINE_ZERO_NORM || ng < COSINE_ZERO_NORM {
                        continue;
                    }
                    let (up, ui) = (g.get(0, i), u.get(0, i));
                    let denom = ns * ng;
                    let dsr = ds.row_mut(i);
                    for c in 0..si.len() {
                        dsr[c] = up * (gt[c] / denom - ui * si[c] / (ns * ns));
                    }
                    for (c, d) in dg.row_mut(0).iter_mut().enumerate() {
                        *d += up * (si[c] / denom - ui * gt[c] / (ng * ng));
                    }
                }
                accumulate(grads, *rows, ds);
                accumulate(grads, *target, dg);
            }
            Op::Fused { input, grad } => {
                accumulate(grads, *input, grad.scale(g.get(0, 0)));
            }
        }
        Ok(())
    }
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| f(*x, *y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("shapes checked at record time")
}

fn accumulate(grads: &mut [Option<Matrix>], id: usize, g: Matrix) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Adjoints from one reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the swept output with respect to `v`; `None` when `v` does
    /// not influence it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Adds the gradients of every parameter bound on `tape` into `store`.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) -> Result<()> {
        for (name, var) in tape.bound_params() {
            if let Some(g) = self.get(var) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}
