//! Tape-based reverse-mode differentiation over whole tensors.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape in reverse, accumulating vector-Jacobian products. The
//! op set is the handful needed by the denoiser and its losses.

use crate::error::{Error, Result};
use crate::nnet::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    WeightedSqErr {
        pred: Var,
        target: Var,
        weights: Vec<f64>,
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
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. Parameters and constants are both leaves; the
    /// caller decides which gradients it reads back.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Adds a bias row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let x = self.value(a);
        let b = self.value(bias);
        let cols = x.cols();
        if b.len() != cols {
            return Err(Error::Shape {
                context: "add_row bias",
                dim: 1,
                expected: cols,
                actual: b.len(),
            });
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scale(k);
        self.push(value, Op::Scale(a, k))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(silu);
        self.push(value, Op::Silu(a))
    }

    /// Concatenates 2-D operands with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(Error::Shape {
                    context: "concat_cols rows",
                    dim: 0,
                    expected: rows,
                    actual: t.rows(),
                });
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (n, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= n {
                return Err(Error::InvalidArgument(format!(
                    "row index {id} out of range for table with {n} rows"
                )));
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::matrix(ids.len().max(1), cols, data)?;
        Ok(self.push(value, Op::GatherRows(table, ids.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// `Σ_r w_r ‖pred_r − target_r‖² / rows`, a scalar.
    pub fn weighted_sq_err(&mut self, pred: Var, target: Var, weights: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        let y = self.value(target);
        p.expect_same_shape(y, "weighted_sq_err")?;
        let rows = p.rows();
        if weights.len() != rows {
            return Err(Error::Shape {
                context: "weighted_sq_err weights",
                dim: 0,
                expected: rows,
                actual: weights.len(),
            });
        }
        let mut total = 0.0;
        for (r, w) in weights.iter().enumerate() {
            let err: f64 = p
                .row(r)
                .iter()
                .zip(y.row(r))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += w * err;
        }
        let value = Tensor::scalar(total / rows as f64);
        Ok(self.push(
            value,
            Op::WeightedSqErr {
                pred,
                target,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = g.matmul_t(false, bv, true)?;
                    let gb = av.matmul_t(true, &g, false)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::AddRow(a, bias) => {
                    let cols = g.cols();
                    let mut gb = vec![0.0; cols];
                    for row in g.data().chunks(cols) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    accumulate(&mut grads, *bias, Tensor::new(shape, gb)?)?;
                    accumulate(&mut grads, *a, g)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0))?;
                    accumulate(&mut grads, *a, g)?;
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let gb = g.zip_map(self.value(*a), |x, y| x * y)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads, *a, g.scale(*k))?;
                }
                Op::Silu(a) => {
                    let ga = g.zip_map(self.value(*a), |gv, x| gv * silu_grad(x))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.value(*p).cols();
                        let mut data = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            let start = r * total + offset;
                            data.extend_from_slice(&g.data()[start..start + pc]);
                        }
                        let shape = self.value(*p).shape().to_vec();
                        accumulate(&mut grads, *p, Tensor::new(shape, data)?)?;
                        offset += pc;
                    }
                }
                Op::GatherRows(table, ids) => {
                    let tv = self.value(*table);
                    let cols = tv.cols();
                    let mut gt = Tensor::zeros(tv.shape());
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt.data_mut()[id * cols..(id + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *table, gt)?;
                }
                Op::Sum(a) => {
                    let seed = g.data()[0];
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&shape, seed))?;
                }
                Op::WeightedSqErr {
                    pred,
                    target,
                    weights,
                } => {
                    let seed = g.data()[0];
                    let p = self.value(*pred);
                    let y = self.value(*target);
                    let rows = p.rows();
                    let cols = p.cols();
                    let mut gp = Vec::with_capacity(p.len());
                    for (r, w) in weights.iter().enumerate() {
                        let k = seed * 2.0 * w / rows as f64;
                        for c in 0..cols {
                            gp.push(k * (p.data()[r * cols + c] - y.data()[r * cols + c]));
                        }
                    }
                    let gp = Tensor::new(p.shape().to_vec(), gp)?;
                    accumulate(&mut grads, *target, gp.scale(-1.0))?;
                    accumulate(&mut grads, *pred, gp)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Gradients of a scalar with respect to graph leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, materialising zeros of `like`'s shape when absent.
    pub fn wrt(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}
