//! Dense `f64` tensors, a reverse-mode tape, and the seedable random source.
//!
//! Tensors are row-major and immutable once built. Everything that needs
//! gradients goes through [`Tape`]; the eager methods on [`Tensor`] share the
//! same kernels so taped and untaped evaluation agree bit for bit.

mod gradcheck;
mod random;
mod tape;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport, KINK_TOLERANCE};
pub use random::RandomSource;
pub use tape::{Gradients, NodeId, Tape};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

/// Pointwise single-argument operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Log,
    Exp,
    Neg,
    Abs,
    /// `ln(1 + e^x)`, evaluated without overflow.
    Softplus,
    Scale(f64),
    AddScalar(f64),
    ClampMin(f64),
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

impl UnaryOp {
    pub(crate) fn name(self) -> &'static str {
        match self {
            UnaryOp::Relu => "relu",
            UnaryOp::LeakyRelu(_) => "leaky_relu",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Sigmoid => "sigmoid",
            UnaryOp::Log => "log",
            UnaryOp::Exp => "exp",
            UnaryOp::Neg => "neg",
            UnaryOp::Abs => "abs",
            UnaryOp::Softplus => "softplus",
            UnaryOp::Scale(_) => "scale",
            UnaryOp::AddScalar(_) => "add_scalar",
            UnaryOp::ClampMin(_) => "clamp_min",
            UnaryOp::Square => "square",
        }
    }

    #[inline]
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            UnaryOp::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Sigmoid => sigmoid(x),
            UnaryOp::Log => x.ln(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Neg => -x,
            UnaryOp::Abs => x.abs(),
            UnaryOp::Softplus => softplus(x),
            UnaryOp::Scale(c) => c * x,
            UnaryOp::AddScalar(c) => x + c,
            UnaryOp::ClampMin(lo) => {
                if x < lo {
                    lo
                } else {
                    x
                }
            }
            UnaryOp::Square => x * x,
        }
    }

    /// Local derivative given the input `x` and the forward output `y`.
    #[inline]
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryOp::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryOp::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            UnaryOp::Tanh => 1.0 - y * y,
            UnaryOp::Sigmoid => y * (1.0 - y),
            UnaryOp::Log => 1.0 / x,
            UnaryOp::Exp => y,
            UnaryOp::Neg => -1.0,
            UnaryOp::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Softplus => sigmoid(x),
            UnaryOp::Scale(c) => c,
            UnaryOp::AddScalar(_) => 1.0,
            UnaryOp::ClampMin(lo) => {
                if x < lo {
                    0.0
                } else {
                    1.0
                }
            }
            UnaryOp::Square => 2.0 * x,
        }
    }

    /// Location of the non-differentiable point, for ops that have one.
    pub(crate) fn kink(self) -> Option<f64> {
        match self {
            UnaryOp::Relu | UnaryOp::LeakyRelu(_) | UnaryOp::Abs => Some(0.0),
            UnaryOp::ClampMin(lo) => Some(lo),
            _ => None,
        }
    }
}

impl BinaryOp {
    pub(crate) fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn ensure_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

impl Tensor {
    /// Builds a tensor, checking the element count and finiteness.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "dims {:?} need {} entries, got {}",
                dims,
                expected,
                data.len()
            )));
        }
        ensure_finite(&data, "tensor construction")?;
        Ok(Tensor { dims, data })
    }

    pub(crate) fn from_parts_unchecked(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor { dims, data }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Tensor::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            dims: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::contract(format!(
                "item() on tensor with dims {:?}",
                self.dims
            )))
        }
    }

    pub fn rows(&self) -> usize {
        self.dims.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.dims.len() {
            0 => 1,
            1 => 1,
            _ => self.dims[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} to {:?}",
                self.dims, dims
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Returns a copy with one entry replaced. Used by finite differences.
    pub fn with_entry(&self, index: usize, value: f64) -> Tensor {
        let mut out = self.clone();
        out.data[index] = value;
        out
    }

    fn require_matrix(&self, what: &str) -> Result<(usize, usize)> {
        if self.dims.len() != 2 {
            return Err(Error::shape(format!(
                "{what} expects a matrix, got dims {:?}",
                self.dims
            )));
        }
        Ok((self.dims[0], self.dims[1]))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_matrix("matmul")?;
        let (k2, n) = other.require_matrix("matmul")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dims disagree: {m}x{k} by {k2}x{n}"
            )));
        }
        let data = matmul_kernel(&self.data, &other.data, m, k, n);
        ensure_finite(&data, "matmul")?;
        Ok(Tensor::from_parts_unchecked(vec![m, n], data))
    }

    pub fn unary(&self, op: UnaryOp) -> Result<Tensor> {
        if op == UnaryOp::Log {
            if let Some(bad) = self.data.iter().find(|v| **v <= 0.0) {
                return Err(Error::domain(format!("log of non-positive value {bad}")));
            }
        }
        let data: Vec<f64> = self.data.iter().map(|&x| op.apply(x)).collect();
        ensure_finite(&data, op.name())?;
        Ok(Tensor::from_parts_unchecked(self.dims.clone(), data))
    }

    pub fn binary(&self, op: BinaryOp, other: &Tensor) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "{} operands differ: {:?} vs {:?}",
                op.name(),
                self.dims,
                other.dims
            )));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| op.apply(a, b))
            .collect();
        ensure_finite(&data, op.name())?;
        Ok(Tensor::from_parts_unchecked(self.dims.clone(), data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Mul, other)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.unary(UnaryOp::Scale(c))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (_, n) = self.require_matrix("add_row")?;
        if bias.len() != n {
            return Err(Error::shape(format!(
                "bias of length {} against {} columns",
                bias.len(),
                n
            )));
        }
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(n) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        ensure_finite(&data, "add_row")?;
        Ok(Tensor::from_parts_unchecked(self.dims.clone(), data))
    }

    pub fn reduce(&self, op: ReduceOp, axis: Option<usize>) -> Result<Tensor> {
        match axis {
            None => {
                let s: f64 = self.data.iter().sum();
                let v = match op {
                    ReduceOp::Sum => s,
                    ReduceOp::Mean if self.data.is_empty() => 0.0,
                    ReduceOp::Mean => s / self.data.len() as f64,
                };
                Ok(Tensor::scalar(v))
            }
            Some(axis) => {
                if axis >= self.dims.len() {
                    return Err(Error::shape(format!(
                        "axis {axis} out of range for rank {}",
                        self.dims.len()
                    )));
                }
                let (outer, len, inner) = axis_split(&self.dims, axis);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for a in 0..len {
                        let src = &self.data[(o * len + a) * inner..(o * len + a + 1) * inner];
                        let dst = &mut out[o * inner..(o + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if op == ReduceOp::Mean && len > 0 {
                    let inv = 1.0 / len as f64;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
                let mut dims = self.dims.clone();
                dims.remove(axis);
                Ok(Tensor::from_parts_unchecked(dims, out))
            }
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    /// Row-wise softmax, stabilised by subtracting each row's maximum.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (_, k) = self.require_matrix("softmax_rows")?;
        let data = softmax_kernel(&self.data, k);
        Ok(Tensor::from_parts_unchecked(self.dims.clone(), data))
    }

    /// Stacks the rows of `other` below the rows of `self`.
    pub fn concat_rows(&self, other: &Tensor) -> Result<Tensor> {
        let (m1, n1) = self.require_matrix("concat_rows")?;
        let (m2, n2) = other.require_matrix("concat_rows")?;
        if n1 != n2 {
            return Err(Error::shape(format!(
                "concat_rows column mismatch: {n1} vs {n2}"
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Tensor::from_parts_unchecked(vec![m1 + m2, n1], data))
    }

    /// Selects rows by index, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (m, n) = self.require_matrix("select_rows")?;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(Error::shape(format!("row {i} out of range for {m} rows")));
            }
            data.extend_from_slice(&self.data[i * n..(i + 1) * n]);
        }
        Ok(Tensor::from_parts_unchecked(vec![indices.len(), n], data))
    }

    /// Column `c` of a matrix as an owned vector.
    pub fn column(&self, c: usize) -> Vec<f64> {
        let n = self.cols();
        (0..self.rows()).map(|r| self.data[r * n + c]).collect()
    }
}

fn axis_split(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for (a_row, out_row) in a.chunks_exact(k.max(1)).zip(out.chunks_exact_mut(n.max(1))) {
        for (p, &a_ip) in a_row.iter().enumerate() {
            // relu activations are often exactly zero
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
    out
}

/// `a^T · g` for `a: m×k`, `g: m×n`, giving `k×n`.
pub(crate) fn matmul_tn_kernel(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += a_ip * gv;
            }
        }
    }
    out
}

/// `g · b^T` for `g: m×n`, `b: k×n`, giving `m×k`.
pub(crate) fn matmul_nt_kernel(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            out[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    out
}

pub(crate) fn softmax_kernel(x: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    if k == 0 {
        return out;
    }
    for (row, dst) in x.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total += *d;
        }
        let inv = 1.0 / total;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    out
}

pub(crate) fn reduce_backward(
    grad: &Tensor,
    input_dims: &[usize],
    op: ReduceOp,
    axis: Option<usize>,
) -> Tensor {
    let n: usize = input_dims.iter().product();
    match axis {
        None => {
            let g = grad.data[0];
            let v = match op {
                ReduceOp::Sum => g,
                ReduceOp::Mean => g / n.max(1) as f64,
            };
            Tensor::from_parts_unchecked(input_dims.to_vec(), vec![v; n])
        }
        Some(axis) => {
            let (outer, len, inner) = axis_split(input_dims, axis);
            let scale = match op {
                ReduceOp::Sum => 1.0,
                ReduceOp::Mean => 1.0 / len.max(1) as f64,
            };
            let mut out = vec![0.0; n];
            for o in 0..outer {
                let src = &grad.data[o * inner..(o + 1) * inner];
                for a in 0..len {
                    let dst = &mut out[(o * len + a) * inner..(o * len + a + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s * scale;
                    }
                }
            }
            Tensor::from_parts_unchecked(input_dims.to_vec(), out)
        }
    }
}
