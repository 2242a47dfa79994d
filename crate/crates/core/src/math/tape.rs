//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation appends a node holding its value and the operand handles
//! needed by its backward rule. Nodes are only ever appended, so node order is
//! a topological order and the backward sweep simply walks the tape in reverse.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::math::matrix::{dot, Matrix};
use crate::math::primitives::{
    cosine_distance, gelu, gelu_grad_scalar, layer_norm_with_cache, sigmoid, softmax_rows,
    LayerNormCache,
};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used to name nodes and to target fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulT,
    Add,
    AddRow,
    Mul,
    Scale,
    AddScalar,
    SoftmaxRows,
    LayerNorm,
    Gelu,
    Sigmoid,
    ConcatCols,
    CausalConv,
    AbsForwardDiff,
    CosineDistanceRows,
    Gather,
    Square,
    Mean,
    Sum,
    Log,
    Relu,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    SoftmaxRows(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        cache: LayerNormCache,
    },
    Gelu(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    CausalConv {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    AbsForwardDiff(Var),
    CosineDistanceRows {
        input: Var,
        degenerate: Vec<bool>,
    },
    Gather(Var, Vec<usize>),
    Square(Var),
    Mean(Var),
    Sum(Var),
    Log {
        input: Var,
        floor: f64,
    },
    Relu(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulT(..) => OpKind::MatMulT,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::SoftmaxRows(..) => OpKind::SoftmaxRows,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::CausalConv { .. } => OpKind::CausalConv,
            Op::AbsForwardDiff(..) => OpKind::AbsForwardDiff,
            Op::CosineDistanceRows { .. } => OpKind::CosineDistanceRows,
            Op::Gather(..) => OpKind::Gather,
            Op::Square(..) => OpKind::Square,
            Op::Mean(..) => OpKind::Mean,
            Op::Sum(..) => OpKind::Sum,
            Op::Log { .. } => OpKind::Log,
            Op::Relu(..) => OpKind::Relu,
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
    is_param: bool,
}

/// Scales the adjoint that one backward rule sends to one of its operands.
///
/// Test hook for verifying that gradient audits catch broken rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultInjection {
    pub op: OpKind,
    pub operand: usize,
    pub factor: f64,
}

/// A single-owner recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    fault: Option<FaultInjection>,
}

/// Adjoints of the registered parameters after a backward sweep.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_node: BTreeMap<Var, Matrix>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.by_node.get(&var)
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: FaultInjection) -> Self {
        Tape {
            fault: Some(fault),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            is_param: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A differentiable input whose adjoint is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Matrix) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].is_param = true;
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(value, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a `1×cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, r) = (self.value(a), self.value(row));
        if r.shape() != (1, m.cols()) {
            return Err(Error::Shape {
                op: "add_row",
                left: m.shape(),
                right: r.shape(),
            });
        }
        let mut value = m.clone();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(r.data()) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v + s);
        self.push(value, Op::AddScalar(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = softmax_rows(self.value(a))?;
        Ok(self.push(value, Op::SoftmaxRows(a)))
    }

    pub fn layer_norm(&mut self, input: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (value, cache) =
            layer_norm_with_cache(self.value(input), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                input,
                gain,
                bias,
                cache,
            },
        ))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = gelu(self.value(a));
        self.push(value, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = sigmoid(self.value(a));
        self.push(value, Op::Sigmoid(a))
    }

    /// Concatenates equal-height blocks along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: (rows, cols),
                    right: m.shape(),
                });
            }
            cols += m.cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            for r in 0..rows {
                value.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Causal temporal convolution producing one output channel:
    /// `out[t] = bias + Σ_τ Σ_c kernel[τ,c] · input[t−τ,c]`, with rows before
    /// the start treated as zero. `kernel` is `K×C`, `bias` is `1×1`, result `T×1`.
    pub fn causal_conv(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(kernel), self.value(bias));
        if w.cols() != x.cols() || w.rows() == 0 {
            return Err(Error::Shape {
                op: "causal_conv",
                left: x.shape(),
                right: w.shape(),
            });
        }
        let b = b.item().ok_or(Error::Shape {
            op: "causal_conv bias",
            left: (1, 1),
            right: b.shape(),
        })?;
        let t_len = x.rows();
        let mut value = Matrix::zeros(t_len, 1);
        for t in 0..t_len {
            let mut acc = b;
            for tau in 0..w.rows().min(t + 1) {
                acc += dot(w.row(tau), x.row(t - tau));
            }
            value.set(t, 0, acc);
        }
        Ok(self.push(
            value,
            Op::CausalConv {
                input,
                kernel,
                bias,
            },
        ))
    }

    /// `|v[t] − v[t+1]|` for a column vector of length ≥ 2.
    pub fn abs_forward_diff(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.cols() != 1 {
            return Err(Error::Shape {
                op: "abs_forward_diff",
                left: v.shape(),
                right: (v.rows(), 1),
            });
        }
        if v.rows() < 2 {
            return Err(Error::EmptyDynamics(v.rows()));
        }
        let d: Vec<f64> = v.data().windows(2).map(|w| (w[0] - w[1]).abs()).collect();
        Ok(self.push(Matrix::column(&d), Op::AbsForwardDiff(a)))
    }

    /// Cosine distance between consecutive rows, as a `(T−1)×1` column.
    pub fn cosine_distance_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.rows() < 2 {
            return Err(Error::EmptyDynamics(m.rows()));
        }
        let mut values = Vec::with_capacity(m.rows() - 1);
        let mut degenerate = Vec::with_capacity(m.rows() - 1);
        for t in 0..m.rows() - 1 {
            let d = cosine_distance(m.row(t), m.row(t + 1));
            values.push(d.value);
            degenerate.push(d.degenerate);
        }
        Ok(self.push(
            Matrix::column(&values),
            Op::CosineDistanceRows {
                input: a,
                degenerate,
            },
        ))
    }

    /// Selects flat entries of `a` into a column.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= m.len()) {
            return Err(Error::Shape {
                op: "gather",
                left: m.shape(),
                right: (bad, 1),
            });
        }
        let picked: Vec<f64> = indices.iter().map(|&i| m.data()[i]).collect();
        Ok(self.push(Matrix::column(&picked), Op::Gather(a, indices.to_vec())))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        self.push(value, Op::Square(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(Error::Shape {
                op: "mean",
                left: m.shape(),
                right: (1, 1),
            });
        }
        let value = Matrix::scalar(m.sum() / m.len() as f64);
        Ok(self.push(value, Op::Mean(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Natural log of `max(a, floor)`; the clamp keeps saturated probabilities finite.
    pub fn log(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).map(|v| v.max(floor).ln());
        self.push(value, Op::Log { input: a, floor })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Sum of any number of equally shaped nodes.
    pub fn add_all(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::Tape("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &p| self.add(acc, p))
    }

    /// Propagates adjoints from the scalar `loss` back to every parameter.
    ///
    /// A tape supports exactly one backward sweep.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Tape("backward already run on this tape".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Tape(format!("node {} not on this tape", loss.0)));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let mut adjoints: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adjoints[i].take() else {
                continue;
            };
            if self.nodes[i].is_param {
                adjoints[i] = Some(g);
                continue;
            }
            for (operand, contribution) in self.local_grads(i, &g)? {
                let contribution = match self.fault {
                    Some(f) if f.op == self.nodes[i].op.kind() && contribution.0 == f.operand => {
                        contribution.1.scale(f.factor)
                    }
                    _ => contribution.1,
                };
                match &mut adjoints[operand.0] {
                    Some(acc) => acc.add_assign(&contribution)?,
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        let mut by_node = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.is_param {
                let grad = adjoints
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()));
                by_node.insert(Var(i), grad);
            }
        }
        Ok(Gradients { by_node })
    }

    /// Vector-Jacobian products of node `i` for adjoint `g`, as
    /// `(operand, (operand position, contribution))`.
    fn local_grads(&self, i: usize, g: &Matrix) -> Result<Vec<(Var, (usize, Matrix))>> {
        let node = &self.nodes[i];
        let y = &node.value;
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let da = g.matmul_t(self.value(*b))?;
                let db = self.value(*a).t_matmul(g)?;
                vec![(*a, (0, da)), (*b, (1, db))]
            }
            Op::MatMulT(a, b) => {
                let da = g.matmul(self.value(*b))?;
                let db = g.t_matmul(self.value(*a))?;
                vec![(*a, (0, da)), (*b, (1, db))]
            }
            Op::Add(a, b) => vec![(*a, (0, g.clone())), (*b, (1, g.clone()))],
            Op::AddRow(a, row) => vec![(*a, (0, g.clone())), (*row, (1, column_sums(g)))],
            Op::Mul(a, b) => {
                let da = g.zip_map(self.value(*b), "mul backward", |x, y| x * y)?;
                let db = g.zip_map(self.value(*a), "mul backward", |x, y| x * y)?;
                vec![(*a, (0, da)), (*b, (1, db))]
            }
            Op::Scale(a, s) => vec![(*a, (0, g.scale(*s)))],
            Op::AddScalar(a) => vec![(*a, (0, g.clone()))],
            Op::SoftmaxRows(a) => {
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner = dot(yr, gr);
                    for (d, (yv, gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *d = yv * (gv - inner);
                    }
                }
                vec![(*a, (0, dx))]
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                cache,
            } => {
                let gamma = self.value(*gain).data();
                let z = &cache.normalized;
                let n = y.cols() as f64;
                let mut dgain = Matrix::zeros(1, y.cols());
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (zr, gr) = (z.row(r), g.row(r));
                    for c in 0..y.cols() {
                        dgain.data_mut()[c] += gr[c] * zr[c];
                    }
                    let dz: Vec<f64> = gr.iter().zip(gamma).map(|(a, b)| a * b).collect();
                    let sum_dz: f64 = dz.iter().sum();
                    let sum_dz_z = dot(&dz, zr);
                    let inv = cache.inv_std[r];
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = inv / n * (n * dz[c] - sum_dz - zr[c] * sum_dz_z);
                    }
                }
                vec![
                    (*input, (0, dx)),
                    (*gain, (1, dgain)),
                    (*bias, (2, column_sums(g))),
                ]
            }
            Op::Gelu(a) => {
                let dx = g.zip_map(self.value(*a), "gelu backward", |gv, x| {
                    gv * gelu_grad_scalar(x)
                })?;
                vec![(*a, (0, dx))]
            }
            Op::Sigmoid(a) => {
                let dx = g.zip_map(y, "sigmoid backward", |gv, s| gv * s * (1.0 - s))?;
                vec![(*a, (0, dx))]
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(parts.len());
                for (pos, &p) in parts.iter().enumerate() {
                    let cols = self.value(p).cols();
                    let mut dp = Matrix::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        dp.row_mut(r)
                            .copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    grads.push((p, (pos, dp)));
                }
                grads
            }
            Op::CausalConv {
                input,
                kernel,
                bias,
            } => {
                let (x, w) = (self.value(*input), self.value(*kernel));
                let t_len = x.rows();
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                let mut dw = Matrix::zeros(w.rows(), w.cols());
                for t in 0..t_len {
                    let gt = g.get(t, 0);
                    for tau in 0..w.rows().min(t + 1) {
                        let src = t - tau;
                        for c in 0..x.cols() {
                            dw.data_mut()[tau * w.cols() + c] += gt * x.get(src, c);
                        }
                        let wr = w.row(tau);
                        for (d, wv) in dx.row_mut(src).iter_mut().zip(wr) {
                            *d += gt * wv;
                        }
                    }
                }
                vec![
                    (*input, (0, dx)),
                    (*kernel, (1, dw)),
                    (*bias, (2, Matrix::scalar(g.sum()))),
                ]
            }
            Op::AbsForwardDiff(a) => {
                let v = self.value(*a).data();
                let mut dx = vec![0.0; v.len()];
                for t in 0..v.len() - 1 {
                    let s = sign(v[t] - v[t + 1]) * g.data()[t];
                    dx[t] += s;
                    dx[t + 1] -= s;
                }
                vec![(*a, (0, Matrix::column(&dx)))]
            }
            Op::CosineDistanceRows { input, degenerate } => {
                let m = self.value(*input);
                let mut dx = Matrix::zeros(m.rows(), m.cols());
                for t in 0..m.rows() - 1 {
                    if degenerate[t] {
                        continue;
                    }
                    let (a, b) = (m.row(t), m.row(t + 1));
                    let na = dot(a, a).sqrt();
                    let nb = dot(b, b).sqrt();
                    let cos = dot(a, b) / (na * nb);
                    let gt = g.data()[t];
                    // d(1 − cos)/da = −(b/(|a||b|) − cos·a/|a|²)
                    let da: Vec<f64> = a
                        .iter()
                        .zip(b)
                        .map(|(&av, &bv)| -gt * (bv / (na * nb) - cos * av / (na * na)))
                        .collect();
                    let db: Vec<f64> = a
                        .iter()
                        .zip(b)
                        .map(|(&av, &bv)| -gt * (av / (na * nb) - cos * bv / (nb * nb)))
                        .collect();
                    for (d, v) in dx.row_mut(t).iter_mut().zip(da) {
                        *d += v;
                    }
                    for (d, v) in dx.row_mut(t + 1).iter_mut().zip(db) {
                        *d += v;
                    }
                }
                vec![(*input, (0, dx))]
            }
            Op::Gather(a, indices) => {
                let src = self.value(*a);
                let mut dx = Matrix::zeros(src.rows(), src.cols());
                for (k, &idx) in indices.iter().enumerate() {
                    dx.data_mut()[idx] += g.data()[k];
                }
                vec![(*a, (0, dx))]
            }
            Op::Square(a) => {
                let dx = g.zip_map(self.value(*a), "square backward", |gv, x| 2.0 * x * gv)?;
                vec![(*a, (0, dx))]
            }
            Op::Mean(a) => {
                let src = self.value(*a);
                let gv = g.data()[0] / src.len() as f64;
                vec![(*a, (0, Matrix::filled(src.rows(), src.cols(), gv)))]
            }
            Op::Sum(a) => {
                let src = self.value(*a);
                vec![(*a, (0, Matrix::filled(src.rows(), src.cols(), g.data()[0])))]
            }
            Op::Log { input, floor } => {
                let dx = g.zip_map(self.value(*input), "log backward", |gv, x| {
                    if x > *floor {
                        gv / x
                    } else {
                        0.0
                    }
                })?;
                vec![(*input, (0, dx))]
            }
            Op::Relu(a) => {
                let dx = g.zip_map(self.value(*a), "relu backward", |gv, x| {
                    if x > 0.0 {
                        gv
                    } else {
                        0.0
                    }
                })?;
                vec![(*a, (0, dx))]
            }
        };
        Ok(out)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let p = tape.param(Matrix::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]));
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap(), &Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn zero_scaled_loss_gives_zeros() {
        let mut tape = Tape::new();
        let p = tape.param(Matrix::from_rows(&[&[1.0, -2.0, 4.0]]));
        let g = tape.gelu(p);
        let s = tape.sum(g);
        let loss = tape.scale(s, 0.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn unreached_param_gets_zero() {
        let mut tape = Tape::new();
        let p = tape.param(Matrix::zeros(2, 3));
        let q = tape.param(Matrix::filled(1, 1, 2.0));
        let loss = tape.square(q);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap(), &Matrix::zeros(2, 3));
        assert_eq!(grads.get(q).unwrap().item(), Some(4.0));
    }

    #[test]
    fn rejects_non_scalar_and_second_backward() {
        let mut tape = Tape::new();
        let p = tape.param(Matrix::zeros(2, 2));
        assert!(tape.backward(p).is_err());
        let loss = tape.sum(p);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Tape(_))));
    }

    #[test]
    fn shared_operand_accumulates() {
        let mut tape = Tape::new();
        let p = tape.param(Matrix::scalar(3.0));
        let prod = tape.mul(p, p).unwrap();
        let loss = tape.add(prod, p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().item(), Some(7.0));
    }

    #[test]
    fn causal_conv_is_left_padded() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(&[1.0, 2.0, 3.0]));
        let w = tape.constant(Matrix::column(&[1.0, 10.0]));
        let b = tape.constant(Matrix::scalar(0.5));
        let out = tape.causal_conv(x, w, b).unwrap();
        assert_eq!(tape.value(out).data(), &[1.5, 12.5, 23.5]);
    }
}
