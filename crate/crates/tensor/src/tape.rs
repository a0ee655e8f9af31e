//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! Every forward operation appends a node holding its value; nodes only ever
//! reference earlier nodes, so the tape order is a topological order and the
//! backward sweep is a single reverse pass. A tape is rebuilt for every
//! forward evaluation and is confined to one thread.
//!
//! Every forward op checks its output for NaN/Inf and fails immediately.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::params::{Gradients, ParameterStore};
use crate::tensor::{gemm_nt, gemm_tn, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean attention mask; `true` marks a position that may be attended to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(TensorError::DataLength {
                shape: vec![rows, cols],
                len: allowed.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            allowed,
        })
    }

    /// Lower-triangular mask: entry (i, j) is allowed iff j <= i.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|idx| idx % n <= idx / n).collect();
        Self {
            rows: n,
            cols: n,
            allowed,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allowed(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.cols + col]
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Transpose(Var),
    Row(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Dropout(Var, Vec<f64>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    by_name: HashMap<String, Var>,
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

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value, "constant")
    }

    /// Trainable leaf. Registering the same name twice returns the same node.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Result<Var> {
        if let Some(&v) = self.by_name.get(name) {
            return Ok(v);
        }
        let v = self.push(Op::Leaf, value.clone(), "param")?;
        self.params.push((name.to_string(), v));
        self.by_name.insert(name.to_string(), v);
        Ok(v)
    }

    /// Registers `name` from `store`.
    pub fn param_from(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.by_name.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        self.param(name, value)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.nodes[a.0].value.shape() != self.nodes[b.0].value.shape() {
            return Err(TensorError::Dimension {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), value, "matmul")
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_parts(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |p, q| p + q);
        self.push(Op::Add(a, b), value, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |p, q| p - q);
        self.push(Op::Sub(a, b), value, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |p, q| p * q);
        self.push(Op::Mul(a, b), value, "mul")
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.value(bias).len() != n {
            return Err(TensorError::Dimension {
                op: "add_row",
                left: self.shape(a),
                right: self.shape(bias),
            });
        }
        let x = self.value(a);
        let b = self.value(bias).data();
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let value = Tensor::from_parts(vec![m, n], data);
        self.push(Op::AddRow(a, bias), value, "add_row")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v * factor);
        self.push(Op::Scale(a, factor), value, "scale")
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(gelu);
        self.push(Op::Gelu(a), value, "gelu")
    }

    /// Row-wise softmax restricted to the allowed entries of `mask`.
    ///
    /// Masked entries come out exactly zero. A row with no allowed entry is
    /// an error.
    pub fn masked_softmax(&mut self, scores: Var, mask: Option<&Mask>) -> Result<Var> {
        let (m, n) = self.dims(scores);
        if let Some(mask) = mask {
            if mask.rows != m || mask.cols != n {
                return Err(TensorError::Dimension {
                    op: "masked_softmax",
                    left: self.shape(scores),
                    right: vec![mask.rows, mask.cols],
                });
            }
        }
        let x = self.value(scores).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let keep = |j: usize| mask.is_none_or(|mk| mk.allowed(i, j));
            let max = (0..n)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::DegenerateRow(i));
            }
            let dst = &mut out[i * n..(i + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if keep(j) {
                    dst[j] = (row[j] - max).exp();
                    total += dst[j];
                }
            }
            for v in dst.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::from_parts(vec![m, n], out);
        self.push(Op::Softmax(scores), value, "masked_softmax")
    }

    /// Per-row normalisation to zero mean and unit variance followed by an
    /// affine `gain`/`shift`; variance uses the biased estimator.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(gain).len() != n || self.value(shift).len() != n {
            return Err(TensorError::Dimension {
                op: "layer_norm",
                left: self.shape(x),
                right: self.shape(gain),
            });
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let s = self.value(shift).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + s[j];
            }
        }
        let value = Tensor::from_parts(vec![m, n], out);
        self.push(
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
            value,
            "layer_norm",
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value, "transpose")
    }

    /// Row `index` as a `1 x n` matrix.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if index >= m {
            return Err(TensorError::Dimension {
                op: "row",
                left: self.shape(a),
                right: vec![index],
            });
        }
        let value = Tensor::from_parts(vec![1, n], self.value(a).row(index).to_vec());
        self.push(Op::Row(a, index), value, "row")
    }

    /// Stacks matrices vertically; rank-1 inputs count as single rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::EmptyDimension(vec![0]))?;
        let n = self.dims(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != n {
                return Err(TensorError::Dimension {
                    op: "concat_rows",
                    left: self.shape(first),
                    right: self.shape(p),
                });
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let value = Tensor::from_parts(vec![rows, n], data);
        self.push(Op::ConcatRows(parts.to_vec()), value, "concat_rows")
    }

    /// Joins matrices side by side; all inputs need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::EmptyDimension(vec![0]))?;
        let m = self.dims(first).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return Err(TensorError::Dimension {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: self.shape(p),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::from_parts(vec![m, total], data);
        self.push(Op::ConcatCols(parts.to_vec()), value, "concat_cols")
    }

    /// Multiplies elementwise by a fixed mask of per-entry scale factors
    /// (0 for dropped entries, `1/(1-p)` for kept ones).
    pub fn dropout(&mut self, a: Var, scales: Vec<f64>) -> Result<Var> {
        if scales.len() != self.value(a).len() {
            return Err(TensorError::Dimension {
                op: "dropout",
                left: self.shape(a),
                right: vec![scales.len()],
            });
        }
        let x = self.value(a);
        let data = x.data().iter().zip(&scales).map(|(v, s)| v * s).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(Op::Dropout(a, scales), value, "dropout")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value, "sum")
    }

    /// Gradients of scalar `root` with respect to every registered parameter.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        self.backward_scaled(root, 1.0)
    }

    /// Like [`Tape::backward`] with the root seeded by `seed` instead of 1,
    /// i.e. the gradients of `seed * root`.
    pub fn backward_scaled(&self, root: Var, seed: f64) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(TensorError::NotScalar(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![seed]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            // keep leaf gradients for collection below
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        let mut out = Gradients::new();
        for (name, v) in &self.params {
            let shape = self.value(*v).shape().to_vec();
            let g = match grads.get(v.0).and_then(Option::as_ref) {
                Some(g) => Tensor::from_parts(shape, g.clone()),
                None => Tensor::zeros(&shape),
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                gemm_nt(g, val(*b).data(), slot(grads, *a, m * k), m, n, k);
                gemm_tn(val(*a).data(), g, slot(grads, *b, k * n), m, k, n);
            }
            Op::Add(a, b) => {
                accumulate(slot(grads, *a, g.len()), g);
                accumulate(slot(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                accumulate(slot(grads, *a, g.len()), g);
                for (d, &gv) in slot(grads, *b, g.len()).iter_mut().zip(g) {
                    *d -= gv;
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a).data(), val(*b).data());
                for ((d, &gv), &yv) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(y) {
                    *d += gv * yv;
                }
                for ((d, &gv), &xv) in slot(grads, *b, g.len()).iter_mut().zip(g).zip(x) {
                    *d += gv * xv;
                }
            }
            Op::AddRow(a, bias) => {
                accumulate(slot(grads, *a, g.len()), g);
                let n = val(*bias).len();
                let db = slot(grads, *bias, n);
                for row in g.chunks(n) {
                    accumulate(db, row);
                }
            }
            Op::Scale(a, factor) => {
                for (d, &gv) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                    *d += gv * factor;
                }
            }
            Op::Gelu(a) => {
                let x = val(*a).data();
                for ((d, &gv), &xv) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(x) {
                    *d += gv * gelu_grad(xv);
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let n = node.value.cols();
                let d = slot(grads, *a, g.len());
                for ((drow, grow), yrow) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(p, q)| p * q).sum();
                    for j in 0..n {
                        drow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let n = val(*x).cols();
                let gamma = val(*gain).data().to_vec();
                {
                    let dg = slot(grads, *gain, n);
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                {
                    let ds = slot(grads, *shift, n);
                    for grow in g.chunks(n) {
                        accumulate(ds, grow);
                    }
                }
                let dx = slot(grads, *x, g.len());
                let nf = n as f64;
                for (i, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..n {
                        let dh = grow[j] * gamma[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hrow[j];
                    }
                    mean_dh /= nf;
                    mean_dh_h /= nf;
                    let drow = &mut dx[i * n..(i + 1) * n];
                    for j in 0..n {
                        let dh = grow[j] * gamma[j];
                        drow[j] += inv_std[i] * (dh - mean_dh - hrow[j] * mean_dh_h);
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (val(*a).rows(), val(*a).cols());
                let d = slot(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::Row(a, index) => {
                let (m, n) = (val(*a).rows(), val(*a).cols());
                let d = slot(grads, *a, m * n);
                accumulate(&mut d[index * n..(index + 1) * n], g);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(*p).len();
                    accumulate(slot(grads, *p, len), &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut col = 0;
                for p in parts {
                    let (m, c) = (val(*p).rows(), val(*p).cols());
                    let d = slot(grads, *p, m * c);
                    for i in 0..m {
                        accumulate(&mut d[i * c..(i + 1) * c], &g[i * total + col..i * total + col + c]);
                    }
                    col += c;
                }
            }
            Op::Dropout(a, scales) => {
                for ((d, &gv), &s) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(scales) {
                    *d += gv * s;
                }
            }
            Op::Sum(a) => {
                let d = slot(grads, *a, val(*a).len());
                for v in d.iter_mut() {
                    *v += g[0];
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    normal_cdf(x) + x * pdf
}
