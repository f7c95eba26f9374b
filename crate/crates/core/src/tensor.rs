//! Dense row-major `f64` tensors.
//!
//! Only the operations the regularization layers and the autodiff tape need
//! are provided: matrix products (plain and per-sample masked), elementwise
//! arithmetic with scalar broadcast, and a handful of reductions. Every public
//! operation checks shapes and refuses to produce NaN or Inf.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Right-hand side of a binary elementwise operation.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    /// 1.0 where lhs > rhs, else 0.0.
    Greater,
    /// 1.0 where lhs < rhs, else 0.0.
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Relu,
    Exp,
    Log,
    Neg,
    Sigmoid,
}

fn check_finite(op: &str, data: &[f64]) -> Result<()> {
    if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{op} produced non-finite value {bad}")));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Contract(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        check_finite("Tensor::new", &data)?;
        Ok(Self { shape, data })
    }

    /// Internal constructor for callers that have already established the
    /// shape/length invariant.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return shape_err("from_rows", &[cols], &[bad.len()]);
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for in-place updates (optimizer steps). Callers keep
    /// the values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
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
        self.shape.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return shape_err("item", &self.shape, &[1]);
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return shape_err("reshape", &self.shape, shape);
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    fn require_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => shape_err(op, &self.shape, &[0, 0]),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.require_matrix("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self::from_parts(vec![c, r], out))
    }

    /// Standard matrix product `[m×k]·[k×n] -> [m×n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Self> {
        let (m, k) = self.require_matrix("matmul")?;
        let (k2, n) = rhs.require_matrix("matmul")?;
        if k != k2 {
            return shape_err("matmul", &self.shape, &rhs.shape);
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[p * n..(p + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        check_finite("matmul", &out)?;
        Ok(Self::from_parts(vec![m, n], out))
    }

    /// Elementwise binary operation with scalar broadcast.
    pub fn binary(&self, op: BinaryOp, rhs: Operand<'_>) -> Result<Self> {
        let f = |a: f64, b: f64| -> Result<f64> {
            Ok(match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                BinaryOp::Div => {
                    if b == 0.0 {
                        return Err(Error::Domain("division by zero".into()));
                    }
                    a / b
                }
                BinaryOp::Greater => f64::from(u8::from(a > b)),
                BinaryOp::Less => f64::from(u8::from(a < b)),
            })
        };
        let data = match rhs {
            Operand::Scalar(b) => self.data.iter().map(|&a| f(a, b)).collect::<Result<Vec<_>>>()?,
            Operand::Tensor(t) => {
                if t.shape != self.shape {
                    return shape_err("elementwise", &self.shape, &t.shape);
                }
                self.data
                    .iter()
                    .zip(&t.data)
                    .map(|(&a, &b)| f(a, b))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        check_finite("elementwise", &data)?;
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn unary(&self, op: UnaryOp) -> Result<Self> {
        let data = self
            .data
            .iter()
            .map(|&x| match op {
                UnaryOp::Relu => Ok(x.max(0.0)),
                UnaryOp::Exp => Ok(x.exp()),
                UnaryOp::Neg => Ok(-x),
                UnaryOp::Sigmoid => Ok(sigmoid(x)),
                UnaryOp::Log if x > 0.0 => Ok(x.ln()),
                UnaryOp::Log => Err(Error::Domain(format!("log of non-positive value {x}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        check_finite("elementwise", &data)?;
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Self> {
        self.binary(BinaryOp::Add, Operand::Tensor(rhs))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Self> {
        self.binary(BinaryOp::Sub, Operand::Tensor(rhs))
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Self> {
        self.binary(BinaryOp::Mul, Operand::Tensor(rhs))
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        self.binary(BinaryOp::Mul, Operand::Scalar(factor))
    }

    pub fn relu(&self) -> Self {
        self.map(|x| x.max(0.0))
    }

    /// Applies `f` elementwise. The result is not checked for finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub(crate) fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// Adds a length-`n` vector to every row of an `[m×n]` matrix.
    pub fn add_row(&self, bias: &Tensor) -> Result<Self> {
        let (_, n) = self.require_matrix("add_row")?;
        if bias.len() != n {
            return shape_err("add_row", &self.shape, &bias.shape);
        }
        let mut data = self.data.clone();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        check_finite("add_row", &data)?;
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Column sums of a matrix.
    pub fn sum_rows(&self) -> Result<Self> {
        let (_, n) = self.require_matrix("sum_rows")?;
        let mut out = vec![0.0; n];
        for row in self.data.chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Ok(Self::from_parts(vec![n], out))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Selects rows of a matrix by index.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let (r, c) = self.require_matrix("select_rows")?;
        if idx.is_empty() {
            return Err(Error::Contract("select_rows needs at least one index".into()));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::Contract(format!("row {i} out of range for {r} rows")));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self::from_parts(vec![idx.len(), c], data))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&self) -> Result<Self> {
        let (_, n) = self.require_matrix("softmax_rows")?;
        let mut data = self.data.clone();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(Self::from_parts(self.shape.clone(), data))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-sample masked product.
///
/// With a node mask `[B×Din]`, row `k` of the result is `(x_k ⊙ mask_k)·w`.
/// With a connection mask `[B×Din×Dout]`, row `k` is `x_k·(w ⊙ mask_k)`.
pub fn batched_masked_matmul(x: &Tensor, w: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (b, din) = x.require_matrix("batched_masked_matmul")?;
    let (din2, dout) = w.require_matrix("batched_masked_matmul")?;
    if din != din2 {
        return shape_err("batched_masked_matmul", x.shape(), w.shape());
    }
    match mask.shape() {
        [mb, md] if *mb == b && *md == din => {
            let masked = x.zip_map(mask, |a, m| a * m);
            masked.matmul(w)
        }
        [mb, md, mo] if *mb == b && *md == din && *mo == dout => {
            let mut out = vec![0.0; b * dout];
            let plane = din * dout;
            for k in 0..b {
                let xk = x.row(k);
                let mk = &mask.data[k * plane..(k + 1) * plane];
                let out_row = &mut out[k * dout..(k + 1) * dout];
                for i in 0..din {
                    let xi = xk[i];
                    if xi == 0.0 {
                        continue;
                    }
                    let w_row = &w.data[i * dout..(i + 1) * dout];
                    let m_row = &mk[i * dout..(i + 1) * dout];
                    for ((o, wv), mv) in out_row.iter_mut().zip(w_row).zip(m_row) {
                        *o += (xi * mv) * wv;
                    }
                }
            }
            check_finite("batched_masked_matmul", &out)?;
            Ok(Tensor::from_parts(vec![b, dout], out))
        }
        _ => shape_err("batched_masked_matmul", &[b, din, dout], mask.shape()),
    }
}

/// Expands a node mask `[B×Din]` to the connection mask `[B×Din×Dout]` that
/// repeats each entry along the output axis.
pub fn broadcast_node_mask(mask: &Tensor, dout: usize) -> Result<Tensor> {
    let (b, din) = mask.require_matrix("broadcast_node_mask")?;
    let mut data = Vec::with_capacity(b * din * dout);
    for &m in &mask.data {
        data.extend(std::iter::repeat_n(m, dout));
    }
    Ok(Tensor::from_parts(vec![b, din, dout], data))
}
