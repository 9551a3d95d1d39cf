//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! Every forward op appends a node to the tape; [`Graph::backward`] walks
//! the tape in reverse and accumulates gradients into each node that
//! depends on a parameter. Constant inputs never receive gradients.

use super::optim::ParamSet;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const RMS_EPS: f64 = 1e-6;
const ROTARY_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ConcatCols(Var, Var),
    RepeatRow(Var),
    Transpose(Var),
    Softmax(Var),
    RmsNorm(Var),
    SiluGate(Var, Var),
    Rotary(Var),
    MaskRows(Var, Vec<bool>),
    StackRows(Vec<Var>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Graph::new()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant, &[])
    }

    /// Registers a parameter on the tape. Repeated calls for the same
    /// parameter return the same variable.
    pub fn param(&mut self, params: &ParamSet<T>, index: usize) -> Var {
        if self.param_vars.len() < params.len() {
            self.param_vars.resize(params.len(), None);
        }
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        let mut value = params.get(index).tensor.clone();
        value.grad = None;
        let v = self.push(value, Op::Param, &[]);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(shape_err("matmul", &[ar, ac], &[br, bc]));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), ar, ac, bc);
        let t = Tensor::matrix(ar, bc, out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn zip_row(
        &mut self,
        op: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (ta, tr) = (self.value(a), self.value(row));
        let c = ta.cols();
        if tr.rows() != 1 || tr.cols() != c {
            return Err(shape_err(op, ta.shape(), tr.shape()));
        }
        let r = tr.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, r[i % c]))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.zip_row("add_row", a, row, |x, y| x + y)?;
        Ok(self.push(t, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.zip_row("mul_row", a, row, |x, y| x * y)?;
        Ok(self.push(t, Op::MulRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = T::lit(c);
        let ta = self.value(a);
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| x * k).collect(),
        )
        .expect("same shape");
        self.push(t, Op::Scale(a, c), &[a])
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat_feature(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br {
            return Err(shape_err("concat_feature", &[ar, ac], &[br, bc]));
        }
        let mut data = Vec::with_capacity(ar * (ac + bc));
        for r in 0..ar {
            data.extend_from_slice(self.value(a).row_slice(r));
            data.extend_from_slice(self.value(b).row_slice(r));
        }
        let t = Tensor::matrix(ar, ac + bc, data)?;
        Ok(self.push(t, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Replicates a `1 x c` row `rows` times.
    pub fn repeat_row(&mut self, a: Var, rows: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rows() != 1 || rows == 0 {
            return Err(shape_err("repeat_row", ta.shape(), &[rows]));
        }
        let data = ta.data().repeat(rows);
        let t = Tensor::matrix(rows, ta.cols(), data)?;
        Ok(self.push(t, Op::RepeatRow(a), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let src = self.value(a).data();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::matrix(c, r, data).expect("positive shape");
        self.push(t, Op::Transpose(a), &[a])
    }

    /// Row-wise softmax. Columns where `mask` is false receive exactly zero
    /// probability.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(m) = mask {
            if m.len() != c {
                return Err(shape_err("softmax mask", &[r, c], &[m.len()]));
            }
            if !m.iter().any(|&k| k) {
                return Err(Error::AllMasked("softmax"));
            }
        }
        let keep = |j: usize| mask.is_none_or(|m| m[j]);
        let src = self.value(a).data();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let max = (0..c)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for j in (0..c).filter(|&j| keep(j)) {
                let e = (row[j] - max).exp();
                data[i * c + j] = e;
                sum = sum + e;
            }
            for v in &mut data[i * c..(i + 1) * c] {
                *v = *v / sum;
            }
        }
        let t = Tensor::matrix(r, c, data)?;
        Ok(self.push(t, Op::Softmax(a), &[a]))
    }

    /// Divides each row by its root mean square.
    pub fn rms_normalize(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let inv = rms_inv(row);
            data.extend(row.iter().map(|&x| x * inv));
        }
        let t = Tensor::matrix(r, c, data).expect("positive shape");
        self.push(t, Op::RmsNorm(a), &[a])
    }

    /// `x * silu(g)`, the gate of a SwiGLU feed-forward layer.
    pub fn silu_gate(&mut self, x: Var, g: Var) -> Result<Var> {
        let t = self.zip_same("silu_gate", x, g, |x, g| x * g * sigmoid(g))?;
        Ok(self.push(t, Op::SiluGate(x, g), &[x, g]))
    }

    /// Rotates consecutive column pairs of row `p` by `p * base^(-2i/c)`.
    pub fn rotary(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut data = self.value(a).data().to_vec();
        rotate_rows(&mut data, r, c, false);
        let t = Tensor::matrix(r, c, data).expect("positive shape");
        self.push(t, Op::Rotary(a), &[a])
    }

    /// Zeroes the rows where `mask` is false.
    pub fn mask_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if mask.len() != r {
            return Err(shape_err("mask_rows", &[r, c], &[mask.len()]));
        }
        let mut data = self.value(a).data().to_vec();
        for (i, _) in mask.iter().enumerate().filter(|(_, k)| !**k) {
            data[i * c..(i + 1) * c]
                .iter_mut()
                .for_each(|v| *v = T::zero());
        }
        let t = Tensor::matrix(r, c, data)?;
        Ok(self.push(t, Op::MaskRows(a, mask.to_vec()), &[a]))
    }

    /// Stacks `1 x c` rows into a `n x c` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or(Error::ShapeMismatch {
            op: "stack_rows",
            lhs: vec![],
            rhs: vec![],
        })?;
        let c = self.shape(first).1;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &v in rows {
            let t = self.value(v);
            if t.rows() != 1 || t.cols() != c {
                return Err(shape_err("stack_rows", &[1, c], t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let t = Tensor::matrix(rows.len(), c, data)?;
        Ok(self.push(t, Op::StackRows(rows.to_vec()), rows))
    }

    /// Back-propagates `seed` (the gradient of some scalar with respect to
    /// `out`) through the tape.
    pub fn backward(&mut self, out: Var, seed: &[T]) -> Result<()> {
        let n = self.nodes[out.0].value.len();
        if seed.len() != n {
            return Err(shape_err(
                "backward seed",
                self.nodes[out.0].value.shape(),
                &[seed.len()],
            ));
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        self.nodes[out.0].value.grad = Some(seed.to_vec());

        for idx in (0..=out.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].value.grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            self.backprop_node(idx, &op, &g);
            self.nodes[idx].value.grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: impl IntoIterator<Item = T>) {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let n = node.value.len();
        let g = node.value.grad.get_or_insert_with(|| vec![T::zero(); n]);
        for (gi, d) in g.iter_mut().zip(delta) {
            *gi = *gi + d;
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&mut self, idx: usize, op: &Op, g: &[T]) {
        let (r, c) = {
            let t = &self.nodes[idx].value;
            (t.rows(), t.cols())
        };
        match *op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ar, ac) = self.shape(a);
                let bc = self.shape(b).1;
                if self.needs(a) {
                    // dA = G B^T
                    let bt = transpose_raw(self.value(b).data(), ac, bc);
                    let da = matmul_raw(g, &bt, ar, bc, ac);
                    self.accumulate(a, da);
                }
                if self.needs(b) {
                    // dB = A^T G
                    let at = transpose_raw(self.value(a).data(), ar, ac);
                    let db = matmul_raw(&at, g, ac, ar, bc);
                    self.accumulate(b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.iter().copied());
                self.accumulate(b, g.iter().copied());
            }
            Op::AddRow(a, row) => {
                self.accumulate(a, g.iter().copied());
                if self.needs(row) {
                    self.accumulate(row, column_sums(g, r, c));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let d: Vec<T> = g
                        .iter()
                        .zip(self.value(b).data())
                        .map(|(&g, &y)| g * y)
                        .collect();
                    self.accumulate(a, d);
                }
                if self.needs(b) {
                    let d: Vec<T> = g
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(&g, &x)| g * x)
                        .collect();
                    self.accumulate(b, d);
                }
            }
            Op::MulRow(a, row) => {
                if self.needs(a) {
                    let rv = self.value(row).data();
                    let d: Vec<T> = g.iter().enumerate().map(|(i, &g)| g * rv[i % c]).collect();
                    self.accumulate(a, d);
                }
                if self.needs(row) {
                    let av = self.value(a).data();
                    let prod: Vec<T> = g.iter().zip(av).map(|(&g, &x)| g * x).collect();
                    self.accumulate(row, column_sums(&prod, r, c));
                }
            }
            Op::Scale(a, k) => {
                let k = T::lit(k);
                self.accumulate(a, g.iter().map(|&g| g * k));
            }
            Op::ConcatCols(a, b) => {
                let ac = self.shape(a).1;
                let da: Vec<T> = (0..r).flat_map(|i| g[i * c..i * c + ac].to_vec()).collect();
                let db: Vec<T> = (0..r)
                    .flat_map(|i| g[i * c + ac..(i + 1) * c].to_vec())
                    .collect();
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::RepeatRow(a) => {
                self.accumulate(a, column_sums(g, r, c));
            }
            Op::Transpose(a) => {
                self.accumulate(a, transpose_raw(g, r, c));
            }
            Op::Softmax(a) => {
                let y = self.nodes[idx].value.data();
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    let (yr, gr) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                    let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    for j in 0..c {
                        d[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(a, d);
            }
            Op::RmsNorm(a) => {
                let x = self.value(a).data();
                let y = self.nodes[idx].value.data();
                let n = T::lit(c as f64);
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    let inv = rms_inv(&x[i * c..(i + 1) * c]);
                    let (yr, gr) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                    let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum::<T>() / n;
                    for j in 0..c {
                        d[i * c + j] = (gr[j] - yr[j] * dot) * inv;
                    }
                }
                self.accumulate(a, d);
            }
            Op::SiluGate(x, gate) => {
                let xv = self.value(x).data();
                let gv = self.value(gate).data();
                let dx: Vec<T> = g
                    .iter()
                    .zip(gv)
                    .map(|(&g, &z)| g * z * sigmoid(z))
                    .collect();
                let dg: Vec<T> = g
                    .iter()
                    .zip(xv.iter().zip(gv))
                    .map(|(&g, (&x, &z))| {
                        let s = sigmoid(z);
                        g * x * s * (T::one() + z * (T::one() - s))
                    })
                    .collect();
                self.accumulate(x, dx);
                self.accumulate(gate, dg);
            }
            Op::Rotary(a) => {
                let mut d = g.to_vec();
                rotate_rows(&mut d, r, c, true);
                self.accumulate(a, d);
            }
            Op::MaskRows(a, ref mask) => {
                let mut d = g.to_vec();
                for (i, _) in mask.iter().enumerate().filter(|(_, k)| !**k) {
                    d[i * c..(i + 1) * c]
                        .iter_mut()
                        .for_each(|v| *v = T::zero());
                }
                self.accumulate(a, d);
            }
            Op::StackRows(ref rows) => {
                for (i, &v) in rows.iter().enumerate() {
                    self.accumulate(v, g[i * c..(i + 1) * c].iter().copied());
                }
            }
        }
    }

    /// Adds the gradients of every parameter node into `params`.
    pub fn accumulate_param_grads(&self, params: &mut ParamSet<T>) {
        for (i, v) in self.param_vars.iter().enumerate() {
            let Some(v) = v else { continue };
            if let Some(g) = &self.nodes[v.0].value.grad {
                let p = params.get_mut(i);
                let pg = p
                    .tensor
                    .grad
                    .get_or_insert_with(|| vec![T::zero(); g.len()]);
                for (a, b) in pg.iter_mut().zip(g) {
                    *a = *a + *b;
                }
            }
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn rms_inv<T: Real>(row: &[T]) -> T {
    let n = T::lit(row.len() as f64);
    let ms = row.iter().map(|&x| x * x).sum::<T>() / n;
    T::one() / (ms + T::lit(RMS_EPS)).sqrt()
}

pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Real>(a: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn column_sums<T: Real>(g: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for i in 0..r {
        for (o, &v) in out.iter_mut().zip(&g[i * c..(i + 1) * c]) {
            *o = *o + v;
        }
    }
    out
}

/// In-place rotary phase rotation; `inverse` applies the transpose.
fn rotate_rows<T: Real>(data: &mut [T], r: usize, c: usize, inverse: bool) {
    for p in 0..r {
        for i in 0..c / 2 {
            let freq = ROTARY_BASE.powf(-2.0 * i as f64 / c as f64);
            let angle = p as f64 * freq;
            let (s, co) = angle.sin_cos();
            let (s, co) = (T::lit(if inverse { -s } else { s }), T::lit(co));
            let (a, b) = (data[p * c + 2 * i], data[p * c + 2 * i + 1]);
            data[p * c + 2 * i] = a * co - b * s;
            data[p * c + 2 * i + 1] = a * s + b * co;
        }
    }
}
