//! Flat row-major matrices, LU factorization and the in-place queue roll.
//!
//! Everything the controller touches is a [`Mat2`]: a `rows x cols` block of
//! `f64` stored contiguously in row-major order. Vectors are plain slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatRepr", into = "MatRepr")]
pub struct Mat2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Nested-array representation used by serde (`[[row0], [row1], ...]`).
#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct MatRepr(Vec<Vec<f64>>);

impl TryFrom<MatRepr> for Mat2 {
    type Error = Error;

    fn try_from(value: MatRepr) -> Result<Self> {
        Mat2::from_rows(&value.0)
    }
}

impl From<Mat2> for MatRepr {
    fn from(m: Mat2) -> Self {
        MatRepr(m.to_rows())
    }
}

impl Mat2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim(format!("matrix must be at least 1x1, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat2 { rows, cols, data })
    }

    /// Zero matrix. Panics on a zero dimension.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Mat2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.data.fill(value);
        m
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(r, c, rows.concat())
    }

    /// Single-row matrix.
    pub fn row_vector(v: &[f64]) -> Result<Self> {
        Self::new(1, v.len(), v.to_vec())
    }

    /// Single-column matrix.
    pub fn col_vector(v: &[f64]) -> Result<Self> {
        Self::new(v.len(), 1, v.to_vec())
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

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Mat2 {
        let mut t = Mat2::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, k: f64) -> Mat2 {
        Mat2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn add(&self, other: &Mat2) -> Result<Mat2> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat2) -> Result<Mat2> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Mat2, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Mat2> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Mat2 {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `y = A x` for a vector `x` of length `cols`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dim(format!(
                "mul_vec: {}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }
}

impl std::ops::Index<(usize, usize)> for Mat2 {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat2 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Result<Mat2> {
    if a.cols != b.rows {
        return Err(Error::dim(format!(
            "mat_mul: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Mat2::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, aik) in a.row(i).iter().enumerate() {
            if *aik == 0.0 {
                continue;
            }
            for (o, bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Elementwise (Hadamard) product.
pub fn hadamard(a: &Mat2, b: &Mat2) -> Result<Mat2> {
    a.zip_with(b, "hadamard", |x, y| x * y)
}

/// Packed `L\U` factors of a row-permuted square matrix: `P A = L U`, with a
/// unit lower triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct LuFactors {
    pub lu: Mat2,
    /// `perm[i]` is the row of `A` that ended up in row `i` of `P A`.
    pub perm: Vec<usize>,
    /// +1.0 or -1.0, the sign of the permutation.
    pub parity: f64,
}

/// Doolittle LU with partial (row) pivoting.
pub fn lu_factor(a: &Mat2) -> Result<LuFactors> {
    if a.rows != a.cols {
        return Err(Error::dim(format!("lu_factor: matrix is {}x{}", a.rows, a.cols)));
    }
    let n = a.rows;
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut parity = 1.0;

    for k in 0..n {
        let (pivot_row, pivot_abs) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(pivot_abs > 0.0) {
            return Err(Error::SingularMatrix { column: k });
        }
        if pivot_row != k {
            for j in 0..n {
                lu.data.swap(k * n + j, pivot_row * n + j);
            }
            perm.swap(k, pivot_row);
            parity = -parity;
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let factor = lu[(i, k)] / pivot;
            lu[(i, k)] = factor;
            if factor != 0.0 {
                for j in k + 1..n {
                    let ukj = lu[(k, j)];
                    lu[(i, j)] -= factor * ukj;
                }
            }
        }
    }
    Ok(LuFactors { lu, perm, parity })
}

pub fn lu_solve(f: &LuFactors, b: &[f64]) -> Result<Vec<f64>> {
    let n = f.lu.rows;
    if b.len() != n {
        return Err(Error::dim(format!(
            "lu_solve: system is {n}x{n}, rhs has length {}",
            b.len()
        )));
    }
    // forward substitution on P b
    let mut x: Vec<f64> = f.perm.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        let row = f.lu.row(i);
        let s: f64 = row[..i].iter().zip(&x[..i]).map(|(l, v)| l * v).sum();
        x[i] -= s;
    }
    for i in (0..n).rev() {
        let row = f.lu.row(i);
        let s: f64 = row[i + 1..].iter().zip(&x[i + 1..]).map(|(u, v)| u * v).sum();
        x[i] = (x[i] - s) / row[i];
    }
    Ok(x)
}

impl LuFactors {
    pub fn lower(&self) -> Mat2 {
        let n = self.lu.rows;
        let mut l = Mat2::identity(n);
        for i in 0..n {
            for j in 0..i {
                l[(i, j)] = self.lu[(i, j)];
            }
        }
        l
    }

    pub fn upper(&self) -> Mat2 {
        let n = self.lu.rows;
        let mut u = Mat2::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                u[(i, j)] = self.lu[(i, j)];
            }
        }
        u
    }

    /// `P A` reconstructed from the original matrix and `perm`.
    pub fn permute_rows(&self, a: &Mat2) -> Mat2 {
        let mut out = Mat2::zeros(a.rows, a.cols);
        for (i, &p) in self.perm.iter().enumerate() {
            out.row_mut(i).copy_from_slice(a.row(p));
        }
        out
    }

    pub fn determinant(&self) -> f64 {
        (0..self.lu.rows).fold(self.parity, |d, i| d * self.lu[(i, i)])
    }
}

/// Solve `A x = b` in one call.
pub fn solve(a: &Mat2, b: &[f64]) -> Result<Vec<f64>> {
    lu_solve(&lu_factor(a)?, b)
}

/// In-place push/pop of `bsize` elements on the window `queue[start..=end]`.
///
/// Elements shift toward higher indices by `bsize`; the last `bsize` elements
/// of the window fall off, and the first `bsize` slots keep their old values
/// until the caller overwrites them with the newest block.
pub fn roll(queue: &mut [f64], start: usize, end: usize, bsize: usize) -> Result<()> {
    if start > end || end >= queue.len() {
        return Err(Error::Index(format!(
            "roll window [{start}, {end}] on a queue of length {}",
            queue.len()
        )));
    }
    let width = end - start + 1;
    if bsize > width {
        return Err(Error::Index(format!(
            "roll block of {bsize} does not fit a window of {width}"
        )));
    }
    if bsize == 0 {
        return Ok(());
    }
    queue[start..=end].copy_within(0..width - bsize, bsize);
    Ok(())
}
