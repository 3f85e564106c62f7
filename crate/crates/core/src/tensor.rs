//! Dense 2-D float tensors backing the differentiable core.
//!
//! Everything downstream (graph encoders, policy heads, PPO losses) works in
//! terms of `Tensor2`. Storage is row-major `f64`; matrix products go through
//! ndarray's BLAS-free gemm, which is plenty for the graph sizes this toolkit
//! targets (tens to low hundreds of nodes).

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::NumError;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    data: Array2<f64>,
}

/// ndarray ops sometimes hand back F-order storage (e.g. `dot` with
/// degenerate shapes); every `Tensor2` holds C-order so `as_slice` is total.
fn ensure_c_order(data: Array2<f64>) -> Array2<f64> {
    if data.as_slice().is_some() {
        data
    } else {
        let standard = data.as_standard_layout().into_owned();
        if standard.as_slice().is_some() {
            standard
        } else {
            // len-1 axes can defeat as_standard_layout's borrow check
            let shape = (standard.nrows(), standard.ncols());
            Array2::from_shape_fn(shape, |(r, c)| standard[(r, c)])
        }
    }
}

/// Activation applied elementwise after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

/// Order-invariant row reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Mean,
    Max,
    Sum,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { data: Array2::zeros((rows, cols)) }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self { data: Array2::from_elem((rows, cols), value) }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        Self { data: Array2::from_shape_fn((rows, cols), |(r, c)| f(r, c)) }
    }

    /// Builds from a flat row-major buffer. Errors if the length does not
    /// match `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, v: Vec<f64>) -> Result<Self, NumError> {
        if v.len() != rows * cols {
            return Err(NumError::Shape(format!(
                "buffer of {} values cannot fill a {rows}x{cols} tensor",
                v.len()
            )));
        }
        let data = Array2::from_shape_vec((rows, cols), v)
            .map_err(|e| NumError::Shape(e.to_string()))?;
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(NumError::Shape("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.iter().flatten().copied().collect())
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[(r, c)]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[(r, c)] = v;
    }

    /// Flat row-major view of the entries.
    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("tensor storage is contiguous row-major")
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.data.as_slice_mut().expect("tensor storage is contiguous row-major")
    }

    /// Row `r` as a contiguous slice.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.as_slice()[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.as_mut_slice()[r * c..(r + 1) * c]
    }

    /// In-place elementwise add, for gradient accumulation.
    pub fn add_assign(&mut self, rhs: &Tensor2) -> Result<(), NumError> {
        if self.shape() != rhs.shape() {
            return Err(NumError::Shape(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        for (a, b) in self.as_mut_slice().iter_mut().zip(rhs.as_slice()) {
            *a += b;
        }
        Ok(())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.as_slice().to_vec()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }

    /// Matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &Tensor2) -> Result<Tensor2, NumError> {
        if self.cols() != rhs.rows() {
            return Err(NumError::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        Ok(Tensor2 { data: ensure_c_order(self.data.dot(&rhs.data)) })
    }

    pub fn transpose(&self) -> Tensor2 {
        Tensor2 { data: ensure_c_order(self.data.t().to_owned()) }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 { data: ensure_c_order(self.data.mapv(&f)) }
    }

    pub fn scale(&self, k: f64) -> Tensor2 {
        self.map(|v| v * k)
    }

    pub fn add(&self, rhs: &Tensor2) -> Result<Tensor2, NumError> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor2) -> Result<Tensor2, NumError> {
        self.zip_with(rhs, |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, rhs: &Tensor2) -> Result<Tensor2, NumError> {
        self.zip_with(rhs, |a, b| a * b)
    }

    pub fn zip_with(&self, rhs: &Tensor2, f: impl Fn(f64, f64) -> f64) -> Result<Tensor2, NumError> {
        if self.shape() != rhs.shape() {
            return Err(NumError::Shape(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let mut out = self.clone();
        out.data.zip_mut_with(&rhs.data, |a, &b| *a = f(*a, b));
        Ok(out)
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row_broadcast(&self, row: &Tensor2) -> Result<Tensor2, NumError> {
        if row.rows() != 1 || row.cols() != self.cols() {
            return Err(NumError::Shape(format!(
                "broadcast row {:?} onto {:?}",
                row.shape(),
                self.shape()
            )));
        }
        let mut out = self.clone();
        let cols = self.cols();
        let b = row.as_slice();
        for r in out.as_mut_slice().chunks_exact_mut(cols) {
            for (a, v) in r.iter_mut().zip(b) {
                *a += v;
            }
        }
        Ok(out)
    }

    /// Sum of all entries.
    pub fn sum(&self) -> f64 {
        self.data.sum()
    }

    /// Squared Frobenius norm.
    pub fn sq_norm(&self) -> f64 {
        self.as_slice().iter().map(|v| v * v).sum()
    }

    /// Row-major reshape without reordering entries.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Tensor2, NumError> {
        Tensor2::from_vec(rows, cols, self.to_vec())
    }

    /// Stacks the rows of `self` selected by `idx` (duplicates allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor2, NumError> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.rows()) {
            return Err(NumError::Shape(format!(
                "row index {bad} out of range for {} rows",
                self.rows()
            )));
        }
        Ok(Tensor2 { data: ensure_c_order(self.data.select(Axis(0), idx)) })
    }

    pub fn concat_cols(&self, rhs: &Tensor2) -> Result<Tensor2, NumError> {
        if self.rows() != rhs.rows() {
            return Err(NumError::Shape(format!(
                "column concat of {:?} and {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let data = ndarray::concatenate(Axis(1), &[self.data.view(), rhs.data.view()])
            .map_err(|e| NumError::Shape(e.to_string()))?;
        Ok(Tensor2 { data: ensure_c_order(data) })
    }

    /// Replicates a `1 x cols` row `n` times.
    pub fn broadcast_rows(&self, n: usize) -> Result<Tensor2, NumError> {
        if self.rows() != 1 {
            return Err(NumError::Shape(format!("broadcast_rows on {:?}", self.shape())));
        }
        Ok(Tensor2::from_fn(n, self.cols(), |_, c| self.get(0, c)))
    }

    /// Replicates an `rows x 1` column `n` times.
    pub fn broadcast_cols(&self, n: usize) -> Result<Tensor2, NumError> {
        if self.cols() != 1 {
            return Err(NumError::Shape(format!("broadcast_cols on {:?}", self.shape())));
        }
        Ok(Tensor2::from_fn(self.rows(), n, |r, _| self.get(r, 0)))
    }
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed in terms of input `x` and output `y = act(x)`.
    pub fn derivative(&self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// `act(x W + b)` with `b` broadcast over rows.
pub fn dense_forward(
    x: &Tensor2,
    w: &Tensor2,
    b: &Tensor2,
    activation: Activation,
) -> Result<Tensor2, NumError> {
    let y = x.matmul(w)?.add_row_broadcast(b)?;
    Ok(y.map(|v| activation.apply(v)))
}

/// Numerically stable softmax applied independently to each row.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for mut row in out.data.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Reduces all rows to a single `1 x cols` row. Errors on zero rows.
pub fn pool_rows(x: &Tensor2, mode: PoolMode) -> Result<Tensor2, NumError> {
    if x.rows() == 0 {
        return Err(NumError::Shape("pool over zero rows".into()));
    }
    let mut out = Tensor2::zeros(1, x.cols());
    for c in 0..x.cols() {
        let col = x.data.column(c);
        let v = match mode {
            PoolMode::Sum => col.sum(),
            PoolMode::Mean => col.sum() / x.rows() as f64,
            PoolMode::Max => col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        out.set(0, c, v);
    }
    Ok(out)
}
