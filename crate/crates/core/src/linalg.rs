//! Dense row-major matrices and the handful of kernels the trainers need:
//! cross-Gram products, Hadamard reductions, column sums and the Adam rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op} requires at least one {what}")]
    Empty {
        op: &'static str,
        what: &'static str,
    },
    #[error("non-finite gradient entry in table `{table}` at ({row}, {col})")]
    NonFinite {
        table: String,
        row: usize,
        col: usize,
    },
}

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Shape {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input; meant
    /// for literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so zero-width matrices yield empty rows.
        let cols = self.cols.max(1);
        let n = if self.cols == 0 { 0 } else { self.rows };
        self.data.chunks_exact(cols).take(n)
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &DenseMatrix, factor: f64) -> Result<(), LinalgError> {
        same_shape("add_scaled", self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

fn same_shape(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Result<(), LinalgError> {
    if a.shape() != b.shape() {
        return Err(LinalgError::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

#[inline]
fn axpy(out: &mut [f64], alpha: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// `Xᵀ Y` for two `n×d` tables, i.e. `out[i][j] = Σ_k X[k][i]·Y[k][j]`.
///
/// Rows are accumulated in order, so `cross_gram(x, x)` is exactly symmetric.
pub fn cross_gram(x: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    same_shape("cross_gram", x, y)?;
    let d = x.cols;
    let mut out = DenseMatrix::zeros(d, d);
    accumulate_gram(&mut out, x, y, 0..x.rows);
    Ok(out)
}

/// Parallel variant of [`cross_gram`]: rows are split into fixed chunks whose
/// partial products are summed. Values agree with the sequential kernel up to
/// reassociation, not bitwise.
pub fn cross_gram_par(x: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    same_shape("cross_gram", x, y)?;
    let d = x.cols;
    const CHUNK: usize = 1024;
    let chunks: Vec<_> = (0..x.rows).step_by(CHUNK).collect();
    let out = chunks
        .into_par_iter()
        .map(|start| {
            let mut part = DenseMatrix::zeros(d, d);
            accumulate_gram(&mut part, x, y, start..(start + CHUNK).min(x.rows));
            part
        })
        .reduce(
            || DenseMatrix::zeros(d, d),
            |mut a, b| {
                axpy(&mut a.data, 1.0, &b.data);
                a
            },
        );
    Ok(out)
}

fn accumulate_gram(out: &mut DenseMatrix, x: &DenseMatrix, y: &DenseMatrix, rows: std::ops::Range<usize>) {
    let d = x.cols;
    for k in rows {
        let xr = x.row(k);
        let yr = y.row(k);
        for (i, &xv) in xr.iter().enumerate() {
            if xv != 0.0 {
                axpy(&mut out.data[i * d..(i + 1) * d], xv, yr);
            }
        }
    }
}

/// `out += x · w` where `x` is `n×d` and `w` is `d×m`. Rows of `out` are
/// independent, so the optional parallel path stays bit-identical.
pub fn accumulate_product(
    out: &mut DenseMatrix,
    x: &DenseMatrix,
    w: &DenseMatrix,
    parallel: bool,
) -> Result<(), LinalgError> {
    if x.cols != w.rows || out.rows != x.rows || out.cols != w.cols {
        return Err(LinalgError::Shape {
            op: "accumulate_product",
            left: x.shape(),
            right: w.shape(),
        });
    }
    let m = w.cols;
    if m == 0 || out.rows == 0 {
        return Ok(());
    }
    let kernel = |(k, orow): (usize, &mut [f64])| {
        for (j, &xv) in x.row(k).iter().enumerate() {
            if xv != 0.0 {
                axpy(orow, xv, w.row(j));
            }
        }
    };
    if parallel {
        out.data.par_chunks_exact_mut(m).enumerate().for_each(kernel);
    } else {
        out.data.chunks_exact_mut(m).enumerate().for_each(kernel);
    }
    Ok(())
}

/// `Σ_i Σ_j Π_m matrices[m][i][j]`.
pub fn hadamard_sum(matrices: &[&DenseMatrix]) -> Result<f64, LinalgError> {
    let first = matrices.first().ok_or(LinalgError::Empty {
        op: "hadamard_sum",
        what: "matrix",
    })?;
    for m in &matrices[1..] {
        same_shape("hadamard_sum", first, m)?;
    }
    let mut total = 0.0;
    for idx in 0..first.data.len() {
        let mut p = 1.0;
        for m in matrices {
            p *= m.data[idx];
        }
        total += p;
    }
    Ok(total)
}

/// Elementwise product of all matrices in the list.
pub fn hadamard_product(matrices: &[&DenseMatrix]) -> Result<DenseMatrix, LinalgError> {
    let first = matrices.first().ok_or(LinalgError::Empty {
        op: "hadamard_product",
        what: "matrix",
    })?;
    let mut out = (*first).clone();
    for m in &matrices[1..] {
        same_shape("hadamard_product", first, m)?;
        for (o, v) in out.data.iter_mut().zip(&m.data) {
            *o *= v;
        }
    }
    Ok(out)
}

pub fn column_sums(x: &DenseMatrix) -> Result<Vec<f64>, LinalgError> {
    if x.rows == 0 {
        return Err(LinalgError::Empty {
            op: "column_sums",
            what: "row",
        });
    }
    let mut sums = vec![0.0; x.cols];
    for row in x.row_iter() {
        axpy(&mut sums, 1.0, row);
    }
    Ok(sums)
}

/// `a bᵀ` as a `len(a)×len(b)` matrix.
pub fn outer(a: &[f64], b: &[f64]) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(a.len(), b.len());
    for (i, &av) in a.iter().enumerate() {
        for (j, &bv) in b.iter().enumerate() {
            m[(i, j)] = av * bv;
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter table.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: DenseMatrix,
    pub second_moment: DenseMatrix,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            first_moment: DenseMatrix::zeros(rows, cols),
            second_moment: DenseMatrix::zeros(rows, cols),
            step_count: 0,
        }
    }

    pub fn for_table(table: &DenseMatrix) -> Self {
        Self::new(table.rows, table.cols)
    }
}

/// One bias-corrected Adam update of `table` in place.
///
/// The gradient is scanned for non-finite entries before anything is touched,
/// so a rejected step leaves both table and state unchanged.
pub fn adam_step(
    name: &str,
    table: &mut DenseMatrix,
    grad: &DenseMatrix,
    state: &mut AdamState,
    lr: f64,
    adam: &AdamConfig,
) -> Result<(), LinalgError> {
    same_shape("adam_step", table, grad)?;
    same_shape("adam_step", table, &state.first_moment)?;
    same_shape("adam_step", table, &state.second_moment)?;
    if let Some(pos) = grad.data.iter().position(|g| !g.is_finite()) {
        return Err(LinalgError::NonFinite {
            table: name.to_string(),
            row: pos / grad.cols.max(1),
            col: pos % grad.cols.max(1),
        });
    }
    state.step_count += 1;
    let t = state.step_count as f64;
    let (b1, b2) = (adam.beta1, adam.beta2);
    let bias1 = 1.0 - b1.powf(t);
    let bias2 = 1.0 - b2.powf(t);
    let step = lr / bias1;
    let bias2_sqrt = bias2.sqrt();
    let m = &mut state.first_moment.data;
    let v = &mut state.second_moment.data;
    for (((p, &g), m), v) in table.data.iter_mut().zip(&grad.data).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= step * *m / (v.sqrt() / bias2_sqrt + adam.eps);
    }
    Ok(())
}
