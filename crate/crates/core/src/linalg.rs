//! Small dense linear algebra used by the spectral path.
//!
//! Singular values are obtained without forming a covariance matrix: the
//! window is first reduced to a square triangular factor with Householder QR
//! and the factor is then diagonalized with one-sided (Hestenes) Jacobi
//! rotations. Jacobi is slower than bidiagonal QR on large inputs but
//! delivers singular values with high relative accuracy, which keeps the
//! small eigenvalues that feed the Marchenko–Pastur histogram trustworthy.

use serde::{Deserialize, Serialize};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
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

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Subtracts each column's mean from that column.
    pub fn center_columns(&mut self) {
        if self.rows == 0 {
            return;
        }
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        means.iter_mut().for_each(|m| *m *= inv);
        for i in 0..self.rows {
            for (v, m) in self.row_mut(i).iter_mut().zip(&means) {
                *v -= m;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

const MAX_SWEEPS: usize = 80;

/// All `min(rows, cols)` singular values of `a`, sorted descending.
///
/// Deterministic: the rotation order is fixed, no randomness is involved.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    // Column-major view of a tall matrix. For a wide `a` the columns of `aᵀ`
    // are the rows of `a`, which are already contiguous.
    let (m, n, mut cols) = if a.rows >= a.cols {
        let t = a.transpose();
        (a.rows, a.cols, t.data)
    } else {
        (a.cols, a.rows, a.data.clone())
    };
    let r = householder_r(&mut cols, m, n);
    jacobi_column_norms(r, n)
}

/// In-place Householder QR of a column-major `m×n` matrix (m ≥ n).
/// Returns the `n×n` upper-triangular factor, column-major.
fn householder_r(a: &mut [f64], m: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    for k in 0..n {
        let col = &a[k * m..(k + 1) * m];
        let norm = col[k..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if col[k] > 0.0 { -norm } else { norm };
        v[k..].copy_from_slice(&col[k..]);
        v[k] -= alpha;
        let vnorm2: f64 = v[k..].iter().map(|x| x * x).sum();
        {
            let colk = &mut a[k * m..(k + 1) * m];
            colk[k] = alpha;
            colk[k + 1..].iter_mut().for_each(|x| *x = 0.0);
        }
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        for j in k + 1..n {
            let colj = &mut a[j * m..(j + 1) * m];
            let dot: f64 = v[k..].iter().zip(&colj[k..]).map(|(x, y)| x * y).sum();
            let f = beta * dot;
            for (c, vi) in colj[k..].iter_mut().zip(&v[k..]) {
                *c -= f * vi;
            }
        }
    }
    let mut r = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..=j {
            r[j * n + i] = a[j * m + i];
        }
    }
    r
}

/// One-sided Jacobi on a column-major `n×n` matrix; returns column norms
/// after orthogonalization, i.e. the singular values, sorted descending.
fn jacobi_column_norms(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    let tol = f64::EPSILON * (n as f64).sqrt();
    let mut norms: Vec<f64> = (0..n)
        .map(|j| a[j * n..(j + 1) * n].iter().map(|x| x * x).sum())
        .collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta) = (norms[p], norms[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (lo, hi) = a.split_at_mut(q * n);
                let cp = &mut lo[p * n..(p + 1) * n];
                let cq = &mut hi[..n];
                let gamma: f64 = cp.iter().zip(cq.iter()).map(|(x, y)| x * y).sum();
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        // Incremental norm updates drift; refresh them once per sweep.
        for (j, nj) in norms.iter_mut().enumerate() {
            *nj = a[j * n..(j + 1) * n].iter().map(|x| x * x).sum();
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = norms.into_iter().map(f64::sqrt).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}
