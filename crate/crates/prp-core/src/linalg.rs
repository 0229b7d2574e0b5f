//! Dense row-major matrices and vectors with the handful of kernels the
//! layers need: plain/transposed products and a Householder QR.
//!
//! Everything is `f64` and sequential, so results are bit-reproducible.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if rows == 0 || cols == 0 {
            return Err(Error::ZeroDim { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::BadDataLen {
                len: data.len(),
                rows,
                cols,
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "matrix data".into(),
                at: Some(i),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::BadDataLen {
                    len: row.len(),
                    rows: r,
                    cols: c,
                });
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(r, c, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * b`
    pub fn matmul(&self, b: &Matrix) -> Result<Matrix> {
        if self.cols != b.rows {
            return Err(Error::DimMismatch {
                op: "matmul",
                lhs: format!("{}x{}", self.rows, self.cols),
                rhs: format!("{}x{}", b.rows, b.cols),
            });
        }
        let mut c = Matrix::zeros(self.rows, b.cols);
        // i-k-j ordering: the inner loop walks contiguous rows of b and c.
        for i in 0..self.rows {
            let crow = &mut c.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let a_ik = self.data[i * self.cols + k];
                if a_ik == 0.0 {
                    continue;
                }
                let brow = &b.data[k * b.cols..(k + 1) * b.cols];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += a_ik * bv;
                }
            }
        }
        Ok(c)
    }

    /// `self * b^T` without materializing the transpose.
    pub fn matmul_transb(&self, b: &Matrix) -> Result<Matrix> {
        if self.cols != b.cols {
            return Err(Error::DimMismatch {
                op: "matmul_transb",
                lhs: format!("{}x{}", self.rows, self.cols),
                rhs: format!("({}x{})^T", b.rows, b.cols),
            });
        }
        let mut c = Matrix::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            let crow = &mut c.data[i * b.rows..(i + 1) * b.rows];
            for j in 0..b.rows {
                let brow = &b.data[j * b.cols..(j + 1) * b.cols];
                let mut acc = 0.0;
                for (av, bv) in arow.iter().zip(brow) {
                    acc += av * bv;
                }
                crow[j] = acc;
            }
        }
        Ok(c)
    }

    /// `self^T * b` without materializing the transpose.
    pub fn matmul_transa(&self, b: &Matrix) -> Result<Matrix> {
        if self.rows != b.rows {
            return Err(Error::DimMismatch {
                op: "matmul_transa",
                lhs: format!("({}x{})^T", self.rows, self.cols),
                rhs: format!("{}x{}", b.rows, b.cols),
            });
        }
        let mut c = Matrix::zeros(self.cols, b.cols);
        // For each output row m, accumulate a[k,m] * b[k,:]; the row of c
        // stays hot while b streams through.
        for m in 0..self.cols {
            let crow = &mut c.data[m * b.cols..(m + 1) * b.cols];
            for k in 0..self.rows {
                let a_km = self.data[k * self.cols + m];
                if a_km == 0.0 {
                    continue;
                }
                let brow = &b.data[k * b.cols..(k + 1) * b.cols];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += a_km * bv;
                }
            }
        }
        Ok(c)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Dense vector of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(len: usize) -> Vector {
        Vector {
            data: vec![0.0; len],
        }
    }

    pub fn ones(len: usize) -> Vector {
        Vector {
            data: vec![1.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Vector {
        Vector { data }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// `p^T x` without materializing the transpose: result[j] = sum_i p[i,j] * x[i].
pub fn matvec_transposed(p: &Matrix, x: &Vector) -> Result<Vector> {
    if x.len() != p.rows() {
        return Err(Error::DimMismatch {
            op: "matvec_transposed",
            lhs: format!("({}x{})^T", p.rows(), p.cols()),
            rhs: format!("len {}", x.len()),
        });
    }
    let mut out = Vector::zeros(p.cols());
    for i in 0..p.rows() {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        let prow = p.row(i);
        for (o, pv) in out.data.iter_mut().zip(prow) {
            *o += xi * pv;
        }
    }
    Ok(out)
}

/// `p x`: result[i] = sum_j p[i,j] * x[j].
pub fn matvec(p: &Matrix, x: &Vector) -> Result<Vector> {
    if x.len() != p.cols() {
        return Err(Error::DimMismatch {
            op: "matvec",
            lhs: format!("{}x{}", p.rows(), p.cols()),
            rhs: format!("len {}", x.len()),
        });
    }
    let mut out = Vector::zeros(p.rows());
    for i in 0..p.rows() {
        let prow = p.row(i);
        let mut acc = 0.0;
        for (pv, xv) in prow.iter().zip(x.as_slice()) {
            acc += pv * xv;
        }
        out[i] = acc;
    }
    Ok(out)
}

/// Element-wise product of two equal-length vectors.
pub fn elementwise_mul(a: &Vector, b: &Vector) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            op: "elementwise_mul",
            lhs: format!("len {}", a.len()),
            rhs: format!("len {}", b.len()),
        });
    }
    Ok(Vector::from_vec(
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| x * y)
            .collect(),
    ))
}

/// Thin QR via Householder reflections, returning the orthonormal factor Q.
///
/// The sign convention is fixed so the diagonal of R is nonnegative, which
/// makes the result deterministic. Columns whose R diagonal falls below
/// `1e-12 * max|r_jj|` are reported as rank deficient.
pub fn qr_orthonormal_columns(g: &Matrix) -> Result<Matrix> {
    let (m, n) = g.shape();
    if m < n {
        return Err(Error::OrthogonalShape { d_in: m, d_out: n });
    }
    // Work on a copy of g; v-vectors of the reflections are kept to build Q.
    let mut a = g.clone();
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut rdiag = vec![0.0f64; n];

    for k in 0..n {
        // Householder vector for column k, rows k..m.
        let mut norm2 = 0.0;
        for i in k..m {
            let v = a.get(i, k);
            norm2 += v * v;
        }
        let norm = norm2.sqrt();
        let akk = a.get(k, k);
        // alpha = -sign(akk) * norm avoids cancellation.
        let alpha = if akk >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0f64; m - k];
        v[0] = akk - alpha;
        for i in (k + 1)..m {
            v[i - k] = a.get(i, k);
        }
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        rdiag[k] = alpha.abs();
        if vnorm2 > 0.0 {
            // Apply H = I - 2 v v^T / (v^T v) to the trailing block.
            for j in k..n {
                let mut dot = 0.0;
                for i in k..m {
                    dot += v[i - k] * a.get(i, j);
                }
                let scale = 2.0 * dot / vnorm2;
                for i in k..m {
                    let cur = a.get(i, j);
                    a.set(i, j, cur - scale * v[i - k]);
                }
            }
        }
        vs.push(v);
    }

    let max_diag = rdiag.iter().cloned().fold(0.0, f64::max);
    let threshold = 1e-12 * max_diag;
    for (k, &d) in rdiag.iter().enumerate() {
        if d <= threshold {
            return Err(Error::RankDeficient {
                col: k,
                value: d,
                threshold,
            });
        }
    }

    // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I.
    let mut q = Matrix::zeros(m, n);
    for j in 0..n {
        q.set(j, j, 1.0);
    }
    for k in (0..n).rev() {
        let v = &vs[k];
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in 0..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i - k] * q.get(i, j);
            }
            let scale = 2.0 * dot / vnorm2;
            for i in k..m {
                let cur = q.get(i, j);
                q.set(i, j, cur - scale * v[i - k]);
            }
        }
    }

    // Fix signs so R's diagonal is nonnegative: R = Q^T g, so r_jj has the
    // sign of q[:,j] . g[:,j].
    for j in 0..n {
        let mut dot = 0.0;
        for i in 0..m {
            dot += q.get(i, j) * g.get(i, j);
        }
        if dot < 0.0 {
            for i in 0..m {
                let cur = q.get(i, j);
                q.set(i, j, -cur);
            }
        }
    }
    Ok(q)
}
