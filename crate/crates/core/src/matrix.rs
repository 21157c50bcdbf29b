//! Column-major dense matrices, unit-norm dictionaries, and the matrix
//! products that drive encoding and atom updates.

use std::hash::{DefaultHasher, Hash, Hasher};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Norm below which a column is treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Tolerance on atom norms accepted by [`Dictionary::new`].
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Minimum number of columns handed to one parallel task.
pub const MIN_CHUNK_COLS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Wraps column-major `data`. Fails if the length is wrong or any entry is
    /// not finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!(
                "non-finite entry at ({}, {})",
                pos % rows.max(1),
                pos / rows.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from column vectors of equal length.
    pub fn from_columns<C: AsRef<[f64]>>(rows: usize, columns: &[C]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            let c = c.as_ref();
            if c.len() != rows {
                return Err(Error::DimensionMismatch(format!(
                    "column of length {} in a matrix with {} rows",
                    c.len(),
                    rows
                )));
            }
            data.extend_from_slice(c);
        }
        Self::new(rows, columns.len(), data)
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[col * self.rows + row] = value;
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.cols).map(move |j| self.col(j))
    }

    /// Copies the contiguous column window `start..start + count`.
    pub fn column_range(&self, start: usize, count: usize) -> Self {
        let r = self.rows;
        Self::from_raw(r, count, self.data[start * r..(start + count) * r].to_vec())
    }

    /// Copies the listed columns, in order.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        Self::from_raw(self.rows, idx.len(), data)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "{:?} minus {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_raw(self.rows, self.cols, data))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Column chunk width for a parallel product over `n` columns.
///
/// In deterministic mode the width does not depend on the worker count, so
/// every output entry is produced by an identical kernel call regardless of
/// how many threads run.
pub fn chunk_width(n: usize, workers: usize, deterministic: bool) -> usize {
    if deterministic {
        MIN_CHUNK_COLS
    } else {
        n.div_ceil(workers.max(1)).max(MIN_CHUNK_COLS)
    }
}

/// Worker count and partitioning policy for parallel kernels.
///
/// The thread count itself comes from the enclosing rayon pool; `workers`
/// only shapes how work is split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Parallelism {
    pub workers: usize,
    pub deterministic: bool,
}

impl Parallelism {
    pub fn new(workers: usize, deterministic: bool) -> Self {
        Self {
            workers: workers.max(1),
            deterministic,
        }
    }

    pub fn sequential() -> Self {
        Self::new(1, true)
    }

    /// Column chunk width for `n` columns.
    pub fn chunk(&self, n: usize) -> usize {
        chunk_width(n, self.workers, self.deterministic)
    }
}

/// Raw strided `C = A * B` over column-major buffers.
///
/// `a` is addressed as `a[i * rsa + l * csa]` for an `m x k` operand and `b`
/// as `b[l * rsb + j * csb]` for a `k x n` operand; `c` is a dense
/// column-major `m x n` output that is overwritten.
#[allow(clippy::too_many_arguments)]
fn gemm_raw(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // SAFETY: the caller guarantees that every strided index of `a` and `b`
    // addressed by an m x k and k x n operand lies inside the slices, and `c`
    // holds at least m * n elements with unit row stride and column stride m.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
}

/// `A^T B`, parallel over column chunks of `B`.
pub fn gemm_tn(a: &DenseMatrix, b: &DenseMatrix, chunk: usize) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "A^T B with A {:?} and B {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (inner, p, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; p * n];
    let chunk = chunk.max(1);
    if p > 0 && n > 0 {
        out.par_chunks_mut(p * chunk)
            .enumerate()
            .for_each(|(ci, c)| {
                let start = ci * chunk;
                let cols = c.len() / p;
                let bslice = &b.data[start * inner..(start + cols) * inner];
                gemm_raw(p, inner, cols, &a.data, inner, 1, bslice, 1, inner, c);
            });
    }
    Ok(DenseMatrix::from_raw(p, n, out))
}

/// `E E^T` for the leading `cols` columns of a column-major `rows`-row
/// buffer, written into `out` (length `rows * rows`).
pub fn gram_outer(e: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    gemm_raw(rows, cols, rows, e, 1, rows, e, rows, 1, out);
}

/// `S v` for a dense column-major `n x n` matrix.
pub fn symv(s: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (j, &vj) in v.iter().enumerate() {
        if vj != 0.0 {
            axpy(vj, &s[j * n..(j + 1) * n], out);
        }
    }
}

/// A `d x m` matrix whose columns (atoms) have unit Euclidean norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    matrix: DenseMatrix,
}

impl Dictionary {
    /// Accepts a matrix whose columns are already unit norm within
    /// [`UNIT_NORM_TOL`].
    pub fn new(matrix: DenseMatrix) -> Result<Self> {
        for (j, c) in matrix.columns().enumerate() {
            let n = norm(c);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Precondition(format!(
                    "atom {j} has norm {n}, expected 1"
                )));
            }
        }
        Ok(Self { matrix })
    }

    pub(crate) fn from_normalized(matrix: DenseMatrix) -> Self {
        Self { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows
    }

    pub fn atoms(&self) -> usize {
        self.matrix.cols
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.matrix
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        self.matrix.col(j)
    }

    /// Replaces atom `j` with `v / ||v||`.
    pub fn set_atom(&mut self, j: usize, v: &[f64]) -> Result<()> {
        let n = norm(v);
        if n < ZERO_NORM {
            return Err(Error::ZeroColumn(j));
        }
        for (dst, src) in self.matrix.col_mut(j).iter_mut().zip(v) {
            *dst = src / n;
        }
        Ok(())
    }

    /// Copies atoms `start..start + count` into a new dictionary.
    pub fn slice(&self, start: usize, count: usize) -> Dictionary {
        Dictionary::from_normalized(self.matrix.column_range(start, count))
    }

    /// Writes `part` over atoms `start..start + part.atoms()`.
    pub(crate) fn write_slice(&mut self, start: usize, part: &Dictionary) {
        let d = self.dim();
        self.matrix.data[start * d..(start + part.atoms()) * d]
            .copy_from_slice(part.matrix.as_slice());
    }

    /// Hash of the exact bit pattern of every entry.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.matrix.rows.hash(&mut h);
        self.matrix.cols.hash(&mut h);
        for v in &self.matrix.data {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Scales every column to unit Euclidean norm.
pub fn normalize_columns(matrix: DenseMatrix) -> Result<Dictionary> {
    let mut matrix = matrix;
    for j in 0..matrix.cols {
        let c = matrix.col_mut(j);
        let n = norm(c);
        if n < ZERO_NORM {
            return Err(Error::ZeroColumn(j));
        }
        c.iter_mut().for_each(|v| *v /= n);
    }
    Ok(Dictionary::from_normalized(matrix))
}
