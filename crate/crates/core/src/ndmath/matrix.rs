use std::fmt;

use crate::error::{Error, Result};

/// Axis along which a reduction such as softmax normalizes.
///
/// `Rows` normalizes each row (entries of one row sum to 1); `Cols`
/// normalizes each column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row slices. Panics on ragged input; intended for
    /// literals in tests and small fixtures.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.as_ref().len(), c, "ragged rows");
            data.extend_from_slice(row.as_ref());
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn column(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Matrix, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        matmul_into(self, other, &mut out);
        Ok(out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "matmul_nt: {}x{} times ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        let sparse = sparse_rows(other);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                let mut acc = 0.0;
                match &sparse {
                    Some(rows) => {
                        for &(k, bv) in &rows[j] {
                            acc += a[k] * bv;
                        }
                    }
                    None => {
                        for (x, y) in a.iter().zip(other.row(j)) {
                            acc += x * y;
                        }
                    }
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "matmul_tn: ({}x{})ᵀ times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        let n = other.cols;
        for k in 0..self.rows {
            let b = other.row(k);
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (d, &bv) in dst.iter_mut().zip(b) {
                    *d += a * bv;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.same_shape(other, "elementwise")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a * b)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Matrix {
        self.map(|v| v * k)
    }

    pub fn relu(&self) -> Matrix {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    /// Numerically stable softmax (max-subtracted) along `axis`.
    pub fn softmax(&self, axis: Axis) -> Matrix {
        match axis {
            Axis::Rows => {
                let mut out = self.clone();
                for r in 0..self.rows {
                    softmax_in_place(&mut out.data[r * self.cols..(r + 1) * self.cols]);
                }
                out
            }
            Axis::Cols => self.transpose().softmax(Axis::Rows).transpose(),
        }
    }

    /// Column vector of row sums.
    pub fn row_sums(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: 1,
            data: (0..self.rows).map(|r| self.row(r).iter().sum()).collect(),
        }
    }

    /// Row vector of column sums.
    pub fn col_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Same data reinterpreted with a new shape (row-major order preserved).
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Matrix> {
        if rows * cols != self.data.len() {
            return Err(Error::Shape(format!(
                "reshape {}x{} to {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        Ok(Matrix {
            rows,
            cols,
            data: self.data.clone(),
        })
    }

    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Matrix> {
        if start + width > self.cols {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {}) of {}x{}",
                start + width,
                self.rows,
                self.cols
            )));
        }
        Ok(Matrix::from_fn(self.rows, width, |r, c| self.get(r, start + c)))
    }

    pub fn slice_rows(&self, start: usize, count: usize) -> Result<Matrix> {
        if start + count > self.rows {
            return Err(Error::Shape(format!(
                "slice_rows [{start}, {}) of {}x{}",
                start + count,
                self.rows,
                self.cols
            )));
        }
        Ok(Matrix {
            rows: count,
            cols: self.cols,
            data: self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        })
    }

    pub fn concat_cols(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if let Some(bad) = parts.iter().find(|m| m.rows != rows) {
            return Err(Error::Shape(format!(
                "concat_cols: {} rows vs {} rows",
                rows, bad.rows
            )));
        }
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(r));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn concat_rows(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if let Some(bad) = parts.iter().find(|m| m.cols != cols) {
            return Err(Error::Shape(format!(
                "concat_rows: {} cols vs {} cols",
                cols, bad.cols
            )));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.data.len()).sum());
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Ok(Matrix {
            rows: data.len() / cols.max(1),
            cols,
            data,
        })
    }

    /// `out[i][j] = self[i][j] / sqrt(d[i] · d[j])`, the `D^{-1/2} M D^{-1/2}`
    /// scaling for a column vector `d` of degrees. Shapes are the caller's
    /// responsibility.
    pub fn sym_degree_scale(&self, d: &Matrix) -> Matrix {
        let r: Vec<f64> = d.data.iter().map(|x| 1.0 / x.sqrt()).collect();
        Matrix::from_fn(self.rows, self.cols, |i, j| r[i] * self.get(i, j) * r[j])
    }

    /// Index of the largest entry of each row (first one on ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

// i-k-j order keeps the inner loop contiguous; zero entries of the left
// operand (sparse adjacencies) are skipped.
/// Row-wise nonzero entries `(col, value)`, or `None` when at least half of
/// the entries are nonzero.
fn sparse_rows(m: &Matrix) -> Option<Vec<Vec<(usize, f64)>>> {
    let nonzero = m.data.iter().filter(|v| **v != 0.0).count();
    if 2 * nonzero >= m.data.len() {
        return None;
    }
    Some(
        (0..m.rows)
            .map(|r| {
                m.row(r)
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(c, v)| (c, *v))
                    .collect()
            })
            .collect(),
    )
}

// Skipping zero terms leaves every output bit unchanged: the accumulators
// start at +0 and never turn into -0, so adding a zero product is a no-op.
fn matmul_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let n = b.cols;
    let sparse_b = sparse_rows(b);
    for i in 0..a.rows {
        let dst = &mut out.data[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let av = a.data[i * a.cols + k];
            if av == 0.0 {
                continue;
            }
            match &sparse_b {
                Some(rows) => {
                    for &(j, bv) in &rows[k] {
                        dst[j] += av * bv;
                    }
                }
                None => {
                    let src = &b.data[k * n..(k + 1) * n];
                    for (d, &bv) in dst.iter_mut().zip(src) {
                        *d += av * bv;
                    }
                }
            }
        }
    }
}
