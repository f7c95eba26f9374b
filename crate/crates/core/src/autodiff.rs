//! Reverse-mode differentiation on a linear tape, plus finite-difference
//! oracles used to check it.
//!
//! Nodes are appended in creation order, so ids are already a topological
//! order and `backward` is a single reverse sweep. Masks enter the tape as
//! plain tensors attached to an op, never as nodes, so no gradient can flow
//! into them.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{batched_masked_matmul, sigmoid, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Probability floor applied before taking logs in the cross-entropy losses.
pub const PROB_CLIP: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Elementwise product with a constant tensor (activation masks).
    MulConst(Var, Tensor),
    MatMul(Var, Var),
    /// Per-sample masked product; the mask is a constant.
    MaskedMatMul(Var, Var, Tensor),
    /// Matrix plus a row vector broadcast over rows.
    AddRow(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    Square(Var),
    CategoricalCe(Var, Tensor),
    BinaryCe(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    leaves: Vec<Var>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of every leaf, in leaf creation order. Leaves the root does
    /// not depend on get a zero tensor.
    pub fn leaf_map(&self) -> Vec<(Var, &Tensor)> {
        self.leaves
            .iter()
            .filter_map(|&v| self.get(v).map(|g| (v, g)))
            .collect()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, a.shape(), b.shape());
    }
    Ok(())
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).scale(factor)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Scale(a, factor), rg))
    }

    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        let value = self.value(a).mul(&mask)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MulConst(a, mask), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `x [B×Din]`, `w [Din×Dout]`, mask `[B×Din]` or `[B×Din×Dout]`.
    pub fn masked_matmul(&mut self, x: Var, w: Var, mask: Tensor) -> Result<Var> {
        let value = batched_masked_matmul(self.value(x), self.value(w), &mask)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(value, Op::MaskedMatMul(x, w, mask), rg))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.value(x).add_row(self.value(bias))?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).unary(crate::tensor::UnaryOp::Exp)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Exp(a), rg))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).unary(crate::tensor::UnaryOp::Log)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Log(a), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).softmax_rows()?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SoftmaxRows(a), rg))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let value = v.mul(v)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Square(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Mean over rows of `-Σ_j t_j ln(max(p_j, 1e-12))`.
    pub fn categorical_ce(&mut self, probs: Var, targets: Tensor) -> Result<Var> {
        let value = Tensor::scalar(categorical_ce_value(self.value(probs), &targets)?);
        let rg = self.rg(probs);
        Ok(self.push(value, Op::CategoricalCe(probs, targets), rg))
    }

    /// Mean over all entries of the clipped binary cross-entropy.
    pub fn binary_ce(&mut self, probs: Var, targets: Tensor) -> Result<Var> {
        let value = Tensor::scalar(binary_ce_value(self.value(probs), &targets)?);
        let rg = self.rg(probs);
        Ok(self.push(value, Op::BinaryCe(probs, targets), rg))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::ones(root_value.shape()));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads)?;
            }
            grads[id] = Some(g);
        }

        let leaves: Vec<Var> = (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf))
            .map(Var)
            .collect();
        grads.resize(self.nodes.len(), None);
        for &leaf in &leaves {
            if grads[leaf.0].is_none() {
                grads[leaf.0] = Some(Tensor::zeros(self.nodes[leaf.0].value.shape()));
            }
        }
        Ok(Gradients { grads, leaves })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, contribution: Tensor) {
        if !self.rg(target) {
            return;
        }
        let slot = &mut grads[target.0];
        *slot = Some(match slot.take() {
            Some(existing) => existing.zip_map(&contribution, |a, b| a + b),
            None => contribution,
        });
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.zip_map(vb, |x, y| x * y));
                self.accumulate(grads, *b, g.zip_map(va, |x, y| x * y));
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|v| v * f)),
            Op::MulConst(a, mask) => self.accumulate(grads, *a, g.zip_map(mask, |x, m| x * m)),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul(&vb.transpose()?)?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, va.transpose()?.matmul(g)?);
                }
            }
            Op::MaskedMatMul(x, w, mask) => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (gx, gw) = masked_matmul_grads(vx, vw, mask, g)?;
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *w, gw);
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.rg(*bias) {
                    let gb = g.sum_rows()?.reshape(self.value(*bias).shape())?;
                    self.accumulate(grads, *bias, gb);
                }
            }
            // subgradient 0 at the kink
            Op::Relu(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |x, v| if v > 0.0 { x } else { 0.0 }));
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |x, e| x * e)),
            Op::Log(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |x, v| x / v));
            }
            Op::Sigmoid(a) => self.accumulate(grads, *a, g.zip_map(out, |x, s| x * s * (1.0 - s))),
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                let mut data = Vec::with_capacity(out.len());
                for (srow, grow) in out.data().chunks(n).zip(g.data().chunks(n)) {
                    let dot: f64 = srow.iter().zip(grow).map(|(s, x)| s * x).sum();
                    data.extend(srow.iter().zip(grow).map(|(s, x)| s * (x - dot)));
                }
                self.accumulate(grads, *a, Tensor::from_parts(out.shape().to_vec(), data));
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), s));
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let s = g.data()[0] / va.len() as f64;
                self.accumulate(grads, *a, Tensor::full(va.shape(), s));
            }
            Op::Square(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |x, v| 2.0 * x * v));
            }
            Op::CategoricalCe(p, t) => {
                let vp = self.value(*p);
                let scale = g.data()[0] / vp.rows() as f64;
                let gp = vp.zip_map(t, |pv, tv| if pv > PROB_CLIP { -scale * tv / pv } else { 0.0 });
                self.accumulate(grads, *p, gp);
            }
            Op::BinaryCe(p, t) => {
                let vp = self.value(*p);
                let scale = g.data()[0] / vp.len() as f64;
                let gp = vp.zip_map(t, |pv, tv| {
                    let mut d = 0.0;
                    if pv > PROB_CLIP {
                        d -= tv / pv;
                    }
                    if 1.0 - pv > PROB_CLIP {
                        d += (1.0 - tv) / (1.0 - pv);
                    }
                    scale * d
                });
                self.accumulate(grads, *p, gp);
            }
        }
        Ok(())
    }
}

fn masked_matmul_grads(x: &Tensor, w: &Tensor, mask: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, din) = (x.rows(), x.cols());
    let dout = w.cols();
    if mask.rank() == 2 {
        // out = (x ⊙ m)·w
        let xm = x.zip_map(mask, |a, m| a * m);
        let gw = xm.transpose()?.matmul(g)?;
        let gx = g.matmul(&w.transpose()?)?.zip_map(mask, |a, m| a * m);
        return Ok((gx, gw));
    }
    let md = mask.data();
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let mut gx = vec![0.0; b * din];
    let mut gw = vec![0.0; din * dout];
    let plane = din * dout;
    for k in 0..b {
        let mk = &md[k * plane..(k + 1) * plane];
        let gk = &gd[k * dout..(k + 1) * dout];
        for i in 0..din {
            let xi = xd[k * din + i];
            let mut acc = 0.0;
            for j in 0..dout {
                let m = mk[i * dout + j];
                acc += gk[j] * wd[i * dout + j] * m;
                gw[i * dout + j] += xi * m * gk[j];
            }
            gx[k * din + i] = acc;
        }
    }
    Ok((
        Tensor::from_parts(vec![b, din], gx),
        Tensor::from_parts(vec![din, dout], gw),
    ))
}

pub(crate) fn categorical_ce_value(probs: &Tensor, targets: &Tensor) -> Result<f64> {
    same_shape("categorical_ce", probs, targets)?;
    let total: f64 = probs
        .data()
        .iter()
        .zip(targets.data())
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * p.max(PROB_CLIP).ln())
        .sum();
    Ok(total / probs.rows() as f64)
}

pub(crate) fn binary_ce_value(probs: &Tensor, targets: &Tensor) -> Result<f64> {
    same_shape("binary_ce", probs, targets)?;
    let total: f64 = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / probs.len() as f64)
}

fn eval_checked<F>(f: &mut F, x: &Tensor) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let v = f(x)?;
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("function returned {v}")));
    }
    Ok(v)
}

/// Central differences `(f(x+εe_i) − f(x−εe_i)) / 2ε` for every element.
pub fn finite_diff_grad<F>(mut f: F, at: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    let mut probe = at.clone();
    let mut out = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let orig = at.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval_checked(&mut f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval_checked(&mut f, &probe)?;
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(Tensor::from_parts(at.shape().to_vec(), out))
}

pub const DEFAULT_FD_EPS: f64 = 1e-6;
pub const DEFAULT_HESSIAN_EPS: f64 = 1e-4;

/// Second-order central differences `(f(x+εe_i) − 2f(x) + f(x−εe_i)) / ε²`.
pub fn hessian_diag<F>(mut f: F, at: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    let center = eval_checked(&mut f, at)?;
    let mut probe = at.clone();
    let mut out = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let orig = at.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval_checked(&mut f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval_checked(&mut f, &probe)?;
        probe.data_mut()[i] = orig;
        out.push((plus - 2.0 * center + minus) / (eps * eps));
    }
    Ok(Tensor::from_parts(at.shape().to_vec(), out))
}

/// Largest elementwise `|a − b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
