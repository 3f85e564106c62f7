//! Reverse-mode tape over `Tensor2` values.
//!
//! A forward pass pushes nodes onto the tape; `backward` walks it in reverse
//! and accumulates gradients. Parameters are memoized by name, so calling
//! `param` repeatedly inside a minibatch loop reuses one leaf and the
//! gradient sums across all uses.
//!
//! Masked slots in `masked_log_softmax` are held at a large negative constant
//! instead of `-inf` so downstream arithmetic (entropy terms, products with
//! zero probabilities) stays finite.

use std::collections::BTreeMap;

use crate::error::NumError;
use crate::nn::ParamSet;
use crate::tensor::{pool_rows, softmax_rows, PoolMode, Tensor2};

/// Log-probability assigned to masked slots: exp(MASKED_LOGIT) underflows to
/// exactly 0.0 in f64, so masked probabilities are exactly zero.
pub const MASKED_LOGIT: f64 = -1.0e30;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Constant or input leaf; gradients accumulate but do not propagate.
    /// Parameter leaves look the same; their names live in `Tape::params`.
    Leaf,
    Matmul(Var, Var),
    /// Sparse-dense product: entries are (row, col, weight) of the sparse
    /// left operand.
    Spmm { entries: Vec<(usize, usize, f64)>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBroadcast(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    SumAll(Var),
    MeanAll(Var),
    PoolRows(Var, PoolMode),
    SoftmaxRows(Var),
    MaskedLogSoftmaxRow(Var, Vec<bool>),
    SelectRows(Var, Vec<usize>),
    ConcatCols(Var, Var),
    Reshape(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    Get(Var, usize, usize),
    Clamp(Var, f64, f64),
    MinElem(Var, Var),
    SumVars(Vec<Var>),
}

struct Node {
    value: Tensor2,
    op: Op,
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Per-variable gradients from one backward pass.
pub struct Grads {
    by_var: Vec<Option<Tensor2>>,
}

/// Gradients keyed by parameter path.
pub type GradMap = BTreeMap<String, Tensor2>;

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Tensor2> {
        self.by_var[v.0].as_ref()
    }
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

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant/input leaf.
    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        let mut t = Tensor2::zeros(1, 1);
        t.set(0, 0, v);
        self.leaf(t)
    }

    /// Named parameter leaf, memoized per tape: later calls with the same
    /// name return the first leaf, so gradients accumulate across uses. The
    /// value must not change within the tape's lifetime.
    pub fn param(&mut self, name: &str, value: &Tensor2) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    /// Sparse-left matrix product: `out[r] += w * x[c]` for each entry.
    pub fn spmm(
        &mut self,
        rows: usize,
        entries: Vec<(usize, usize, f64)>,
        x: Var,
    ) -> Result<Var, NumError> {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut out = Tensor2::zeros(rows, cols);
        for &(r, c, w) in &entries {
            if r >= rows || c >= xv.rows() {
                return Err(NumError::Shape(format!(
                    "spmm entry ({r},{c}) out of range for {}x{} input",
                    xv.rows(),
                    cols
                )));
            }
            for j in 0..cols {
                out.set(r, j, out.get(r, j) + w * xv.get(c, j));
            }
        }
        Ok(self.push(out, Op::Spmm { entries, x }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scale(k);
        self.push(value, Op::Scale(a, k))
    }

    /// Adds a `1 x cols` bias row to every row of `x`.
    pub fn add_row_broadcast(&mut self, x: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(x).add_row_broadcast(self.value(b))?;
        Ok(self.push(value, Op::AddRowBroadcast(x, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut t = Tensor2::zeros(1, 1);
        t.set(0, 0, self.value(a).sum());
        self.push(t, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let mut t = Tensor2::zeros(1, 1);
        t.set(0, 0, self.value(a).sum() / n);
        self.push(t, Op::MeanAll(a))
    }

    pub fn pool_rows(&mut self, a: Var, mode: PoolMode) -> Result<Var, NumError> {
        let value = pool_rows(self.value(a), mode)?;
        Ok(self.push(value, Op::PoolRows(a, mode)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Log-softmax over the unmasked entries of a `1 x k` row. Masked slots
    /// come back as `MASKED_LOGIT` (probability exactly 0).
    pub fn masked_log_softmax_row(&mut self, a: Var, mask: &[bool]) -> Result<Var, NumError> {
        let x = self.value(a);
        if x.rows() != 1 || x.cols() != mask.len() {
            return Err(NumError::Shape(format!(
                "masked log-softmax on {:?} with mask of {}",
                x.shape(),
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(NumError::Shape("all slots masked".into()));
        }
        let max = (0..mask.len())
            .filter(|&i| mask[i])
            .map(|i| x.get(0, i))
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + (0..mask.len())
                .filter(|&i| mask[i])
                .map(|i| (x.get(0, i) - max).exp())
                .sum::<f64>()
                .ln();
        let out = Tensor2::from_fn(1, mask.len(), |_, i| {
            if mask[i] {
                x.get(0, i) - lse
            } else {
                MASKED_LOGIT
            }
        });
        Ok(self.push(out, Op::MaskedLogSoftmaxRow(a, mask.to_vec())))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumError> {
        let value = self.value(a).select_rows(idx)?;
        Ok(self.push(value, Op::SelectRows(a, idx.to_vec())))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).concat_cols(self.value(b))?;
        Ok(self.push(value, Op::ConcatCols(a, b)))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NumError> {
        let value = self.value(a).reshape(rows, cols)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var, NumError> {
        let value = self.value(a).broadcast_rows(n)?;
        Ok(self.push(value, Op::BroadcastRows(a)))
    }

    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Result<Var, NumError> {
        let value = self.value(a).broadcast_cols(n)?;
        Ok(self.push(value, Op::BroadcastCols(a)))
    }

    /// Extracts entry `(i, j)` as a 1x1 scalar node.
    pub fn get(&mut self, a: Var, i: usize, j: usize) -> Result<Var, NumError> {
        let x = self.value(a);
        if i >= x.rows() || j >= x.cols() {
            return Err(NumError::Shape(format!("get ({i},{j}) from {:?}", x.shape())));
        }
        let mut t = Tensor2::zeros(1, 1);
        t.set(0, 0, x.get(i, j));
        Ok(self.push(t, Op::Get(a, i, j)))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    /// Elementwise minimum; ties route the gradient to the first operand.
    pub fn min_elem(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).zip_with(self.value(b), f64::min)?;
        Ok(self.push(value, Op::MinElem(a, b)))
    }

    /// Sum of same-shaped variables.
    pub fn sum_vars(&mut self, vars: &[Var]) -> Result<Var, NumError> {
        let first = vars
            .first()
            .ok_or_else(|| NumError::Shape("sum_vars over empty list".into()))?;
        let mut value = self.value(*first).clone();
        for v in &vars[1..] {
            value = value.add(self.value(*v))?;
        }
        Ok(self.push(value, Op::SumVars(vars.to_vec())))
    }

    /// Reverse pass from a scalar loss. Returns per-variable gradients.
    pub fn backward(&self, loss: Var) -> Result<Grads, NumError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(NumError::NonScalarLoss(shape.0, shape.1));
        }
        let mut by_var: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut seed = Tensor2::zeros(1, 1);
        seed.set(0, 0, 1.0);
        by_var[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            let Some(g) = by_var[idx].take() else { continue };
            self.propagate(idx, &g, &mut by_var)?;
            by_var[idx] = Some(g);
        }
        Ok(Grads { by_var })
    }

    fn propagate(
        &self,
        idx: usize,
        g: &Tensor2,
        by_var: &mut [Option<Tensor2>],
    ) -> Result<(), NumError> {
        let acc = |by_var: &mut [Option<Tensor2>], v: Var, delta: Tensor2| -> Result<(), NumError> {
            match &mut by_var[v.0] {
                Some(cur) => {
                    *cur = cur.add(&delta)?;
                }
                slot @ None => *slot = Some(delta),
            }
            Ok(())
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let da = g.matmul(&self.value(*b).transpose())?;
                let db = self.value(*a).transpose().matmul(g)?;
                acc(by_var, *a, da)?;
                acc(by_var, *b, db)?;
            }
            Op::Spmm { entries, x } => {
                let xv = self.value(*x);
                let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                for &(r, c, w) in entries {
                    for j in 0..xv.cols() {
                        dx.set(c, j, dx.get(c, j) + w * g.get(r, j));
                    }
                }
                acc(by_var, *x, dx)?;
            }
            Op::Add(a, b) => {
                acc(by_var, *a, g.clone())?;
                acc(by_var, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(by_var, *a, g.clone())?;
                acc(by_var, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                acc(by_var, *a, g.mul(self.value(*b))?)?;
                acc(by_var, *b, g.mul(self.value(*a))?)?;
            }
            Op::Scale(a, k) => acc(by_var, *a, g.scale(*k))?,
            Op::AddRowBroadcast(x, b) => {
                acc(by_var, *x, g.clone())?;
                let mut db = Tensor2::zeros(1, g.cols());
                for c in 0..g.cols() {
                    let mut s = 0.0;
                    for r in 0..g.rows() {
                        s += g.get(r, c);
                    }
                    db.set(0, c, s);
                }
                acc(by_var, *b, db)?;
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(by_var, *a, g.zip_with(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })?)?;
            }
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                acc(by_var, *a, g.zip_with(y, |gv, yv| gv * (1.0 - yv * yv))?)?;
            }
            Op::Exp(a) => {
                let y = &self.nodes[idx].value;
                acc(by_var, *a, g.mul(y)?)?;
            }
            Op::SumAll(a) => {
                let x = self.value(*a);
                let gv = g.get(0, 0);
                acc(by_var, *a, Tensor2::from_fn(x.rows(), x.cols(), |_, _| gv))?;
            }
            Op::MeanAll(a) => {
                let x = self.value(*a);
                let gv = g.get(0, 0) / x.len() as f64;
                acc(by_var, *a, Tensor2::from_fn(x.rows(), x.cols(), |_, _| gv))?;
            }
            Op::PoolRows(a, mode) => {
                let x = self.value(*a);
                let (rows, cols) = x.shape();
                let mut dx = Tensor2::zeros(rows, cols);
                match mode {
                    PoolMode::Sum => {
                        for r in 0..rows {
                            for c in 0..cols {
                                dx.set(r, c, g.get(0, c));
                            }
                        }
                    }
                    PoolMode::Mean => {
                        for r in 0..rows {
                            for c in 0..cols {
                                dx.set(r, c, g.get(0, c) / rows as f64);
                            }
                        }
                    }
                    PoolMode::Max => {
                        // ties route to the first maximal row
                        for c in 0..cols {
                            let mut best = 0;
                            for r in 1..rows {
                                if x.get(r, c) > x.get(best, c) {
                                    best = r;
                                }
                            }
                            dx.set(best, c, g.get(0, c));
                        }
                    }
                }
                acc(by_var, *a, dx)?;
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let (rows, cols) = y.shape();
                let mut dx = Tensor2::zeros(rows, cols);
                for r in 0..rows {
                    let dot: f64 = (0..cols).map(|c| g.get(r, c) * y.get(r, c)).sum();
                    for c in 0..cols {
                        dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                acc(by_var, *a, dx)?;
            }
            Op::MaskedLogSoftmaxRow(a, mask) => {
                let y = &self.nodes[idx].value;
                let k = mask.len();
                let gsum: f64 = (0..k).filter(|&i| mask[i]).map(|i| g.get(0, i)).sum();
                let mut dx = Tensor2::zeros(1, k);
                for i in 0..k {
                    if mask[i] {
                        dx.set(0, i, g.get(0, i) - y.get(0, i).exp() * gsum);
                    }
                }
                acc(by_var, *a, dx)?;
            }
            Op::SelectRows(a, idx_list) => {
                let x = self.value(*a);
                let mut dx = Tensor2::zeros(x.rows(), x.cols());
                for (out_r, &src_r) in idx_list.iter().enumerate() {
                    for c in 0..x.cols() {
                        dx.set(src_r, c, dx.get(src_r, c) + g.get(out_r, c));
                    }
                }
                acc(by_var, *a, dx)?;
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = g.rows();
                let da = Tensor2::from_fn(rows, ca, |r, c| g.get(r, c));
                let db = Tensor2::from_fn(rows, cb, |r, c| g.get(r, ca + c));
                acc(by_var, *a, da)?;
                acc(by_var, *b, db)?;
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                acc(by_var, *a, g.reshape(r, c)?)?;
            }
            Op::BroadcastRows(a) => {
                let mut dx = Tensor2::zeros(1, g.cols());
                for c in 0..g.cols() {
                    let mut s = 0.0;
                    for r in 0..g.rows() {
                        s += g.get(r, c);
                    }
                    dx.set(0, c, s);
                }
                acc(by_var, *a, dx)?;
            }
            Op::BroadcastCols(a) => {
                let mut dx = Tensor2::zeros(g.rows(), 1);
                for r in 0..g.rows() {
                    let mut s = 0.0;
                    for c in 0..g.cols() {
                        s += g.get(r, c);
                    }
                    dx.set(r, 0, s);
                }
                acc(by_var, *a, dx)?;
            }
            Op::Get(a, i, j) => {
                let x = self.value(*a);
                let mut dx = Tensor2::zeros(x.rows(), x.cols());
                dx.set(*i, *j, g.get(0, 0));
                acc(by_var, *a, dx)?;
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                acc(
                    by_var,
                    *a,
                    g.zip_with(x, |gv, xv| if xv > *lo && xv < *hi { gv } else { 0.0 })?,
                )?;
            }
            Op::MinElem(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let da = g.zip_with(&av.zip_with(bv, |x, y| if x <= y { 1.0 } else { 0.0 })?, |gv, m| gv * m)?;
                let db = g.zip_with(&av.zip_with(bv, |x, y| if x <= y { 0.0 } else { 1.0 })?, |gv, m| gv * m)?;
                acc(by_var, *a, da)?;
                acc(by_var, *b, db)?;
            }
            Op::SumVars(vars) => {
                for v in vars {
                    acc(by_var, *v, g.clone())?;
                }
            }
        }
        Ok(())
    }

    /// Gradients for every parameter in `ps`; parameters the loss never
    /// touched get zeros of the right shape.
    pub fn param_grads(&self, grads: &Grads, ps: &ParamSet) -> GradMap {
        let mut out = GradMap::new();
        for (name, tensor) in ps.iter() {
            let grad = self
                .params
                .get(name)
                .and_then(|v| grads.of(*v).cloned())
                .unwrap_or_else(|| Tensor2::zeros(tensor.rows(), tensor.cols()));
            out.insert(name.to_string(), grad);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_matmul_gradient_is_replicated_row_sums() {
        // loss = sum(x W): dW[k][j] = sum_i x[i][k]
        let mut ps = ParamSet::new(3);
        ps.insert_glorot("w", 3, 2);
        let x = Tensor2::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();

        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let wv = tape.param("w", ps.get("w"));
        let y = tape.matmul(xv, wv).unwrap();
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        let gw = tape.param_grads(&grads, &ps);

        let dw = &gw["w"];
        for k in 0..3 {
            let col_sum = x.get(0, k) + x.get(1, k);
            for j in 0..2 {
                assert!((dw.get(k, j) - col_sum).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unreachable_param_gets_zero_grad() {
        let mut ps = ParamSet::new(0);
        ps.insert_glorot("w", 2, 2);
        ps.insert_zeros("b", 1, 2);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::from_rows(&[vec![1.0, 1.0]]).unwrap());
        let w = tape.param("w", ps.get("w"));
        let y = tape.matmul(x, w).unwrap();
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        let gm = tape.param_grads(&grads, &ps);
        assert!(gm["b"].as_slice().iter().all(|&v| v == 0.0));
        assert!(gm["w"].as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(NumError::NonScalarLoss(2, 2))));
    }

    #[test]
    fn param_memoization_accumulates_across_uses() {
        // loss = sum(w) + sum(w) => dw = 2
        let mut ps = ParamSet::new(0);
        ps.insert_zeros("w", 1, 2);
        let mut tape = Tape::new();
        let w1 = tape.param("w", ps.get("w"));
        let w2 = tape.param("w", ps.get("w"));
        assert_eq!(w1, w2);
        let s1 = tape.sum_all(w1);
        let s2 = tape.sum_all(w2);
        let loss = tape.add(s1, s2).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gm = tape.param_grads(&grads, &ps);
        assert!(gm["w"].as_slice().iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn masked_log_softmax_known_values() {
        // logits [0, ln 3, 0], slot 0 masked -> probs [0, 0.75, 0.25]
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::from_rows(&[vec![0.0, 3.0_f64.ln(), 0.0]]).unwrap());
        let ls = tape.masked_log_softmax_row(x, &[false, true, true]).unwrap();
        let v = tape.value(ls);
        assert_eq!(v.get(0, 0), MASKED_LOGIT);
        assert!((v.get(0, 1).exp() - 0.75).abs() < 1e-12);
        assert!((v.get(0, 2).exp() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn masked_log_softmax_rejects_all_masked() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::zeros(1, 3));
        assert!(tape.masked_log_softmax_row(x, &[false, false, false]).is_err());
    }

    #[test]
    fn max_pool_routes_gradient_to_first_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::from_rows(&[vec![2.0], vec![5.0], vec![5.0]]).unwrap());
        let p = tape.pool_rows(x, PoolMode::Max).unwrap();
        let loss = tape.sum_all(p);
        let grads = tape.backward(loss).unwrap();
        let gx = grads.of(x).unwrap();
        assert_eq!(gx.get(0, 0), 0.0);
        assert_eq!(gx.get(1, 0), 1.0);
        assert_eq!(gx.get(2, 0), 0.0);
    }
}
