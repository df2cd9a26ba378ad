//! Dense row-major matrices and a one-sided Jacobi SVD.
//!
//! Everything here is `f64`. Products use a fixed i-k-j loop order so that
//! results are bitwise reproducible for identical inputs.

use crate::error::{Error, Result};

/// Row-major dense matrix: `data[i * cols + j]` holds entry `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("DenseMatrix::new", (rows, cols), (data.len(), 1)));
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

    /// Builds a matrix from equal-length rows.
    ///
    /// # Panics
    /// Panics if the rows are ragged.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), cols, "row {i} has {} entries, expected {cols}", row.len());
            data.extend_from_slice(row);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Square matrix with `diag` on the diagonal.
    pub fn diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Matrix whose columns are the given vectors (all of length `rows`).
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Self {
        let cols = columns.len();
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), rows);
            for (i, &x) in c.iter().enumerate() {
                m.data[i * cols + j] = x;
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
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

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self.set(i, j, v);
        }
    }

    pub fn zero_column(&mut self, j: usize) {
        for i in 0..self.rows {
            self.set(i, j, 0.0);
        }
    }

    pub fn column_is_zero(&self, j: usize) -> bool {
        (0..self.rows).all(|i| self.get(i, j) == 0.0)
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        matmul(self, other)
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    /// Elementwise `|a * b|`-style combination of two equal-shaped matrices.
    pub fn zip_with(&self, op: &'static str, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape("axpy", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute entry; 0 for an empty matrix.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
    }
}

/// Standard product `a · b` with a fixed i-k-j summation order.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (n, m) = (a.rows, b.cols);
    let mut out = DenseMatrix::zeros(n, m);
    for i in 0..n {
        let out_row = &mut out.data[i * m..(i + 1) * m];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let b_row = &b.data[k * m..(k + 1) * m];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

pub fn frobenius_norm(a: &DenseMatrix) -> f64 {
    a.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Thin SVD `W = Σ σ_i u_i v_iᵀ` with `k = min(rows, cols)` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// Non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    /// `rows × k`, column `i` is `u_i`.
    pub left_vectors: DenseMatrix,
    /// `cols × k`, column `i` is `v_i`.
    pub right_vectors: DenseMatrix,
}

impl SvdResult {
    pub fn len(&self) -> usize {
        self.singular_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.singular_values.is_empty()
    }

    /// Best rank-`r` approximation `Σ_{i<r} σ_i u_i v_iᵀ`.
    pub fn truncated(&self, r: usize) -> DenseMatrix {
        let r = r.min(self.len());
        let (m, n) = (self.left_vectors.rows(), self.right_vectors.rows());
        let mut out = DenseMatrix::zeros(m, n);
        for p in 0..r {
            let s = self.singular_values[p];
            for i in 0..m {
                let ui = s * self.left_vectors.get(i, p);
                for j in 0..n {
                    out.data[i * n + j] += ui * self.right_vectors.get(j, p);
                }
            }
        }
        out
    }

    /// `Σ_{i ≥ r} σ_i²`, the squared Frobenius error of the rank-`r` truncation.
    pub fn tail_energy(&self, r: usize) -> f64 {
        self.singular_values.iter().skip(r).map(|s| s * s).sum()
    }
}

/// Pairwise orthogonality threshold, relative to the two column norms.
const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 60;

/// Singular value decomposition by one-sided Jacobi rotations.
///
/// Columns of the (possibly transposed, so that it is tall) input are rotated
/// pairwise until every pair is orthogonal to `1e-12` relative to the product
/// of their norms. Singular values come out non-increasing; among equal values
/// the Jacobi column order is kept. Each `u_i` is signed so that its
/// largest-magnitude entry is positive.
pub fn svd(w: &DenseMatrix) -> Result<SvdResult> {
    let norm = frobenius_norm(w);
    if !norm.is_finite() {
        return Err(Error::NoConvergence { sweeps: 0, norm });
    }
    let transposed = w.rows < w.cols;
    let a = if transposed { w.transpose() } else { w.clone() };
    let (p, q) = a.shape();

    let mut cols: Vec<Vec<f64>> = (0..q).map(|j| a.column(j)).collect();
    let mut rot: Vec<Vec<f64>> = (0..q)
        .map(|j| {
            let mut e = vec![0.0; q];
            e[j] = 1.0;
            e
        })
        .collect();

    // Columns below roundoff of the whole matrix are deflated to exact zero;
    // otherwise noise-level columns keep rotating into each other forever.
    let deflate = (norm * f64::EPSILON).powi(2);
    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..q {
            for j in (i + 1)..q {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                if alpha <= deflate || beta <= deflate {
                    for k in [i, j] {
                        if dot(&cols[k], &cols[k]) <= deflate {
                            cols[k].fill(0.0);
                        }
                    }
                    continue;
                }
                let gamma = dot(&cols[i], &cols[j]);
                if gamma.abs() <= JACOBI_TOL * (alpha.sqrt() * beta.sqrt()) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(j);
                rotate(&mut lo[i], &mut hi[0], c, s);
                let (lo, hi) = rot.split_at_mut(j);
                rotate(&mut lo[i], &mut hi[0], c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps: MAX_SWEEPS,
            norm,
        });
    }

    let sigma: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..q).collect();
    // stable: ties keep Jacobi order
    order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]));

    // Columns this small carry no direction; replace them with a completion.
    let negligible = norm * f64::EPSILON * f64::EPSILON;
    let mut singular_values = Vec::with_capacity(q);
    let mut jac_left: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut jac_right: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut missing = Vec::new();
    for (slot, &idx) in order.iter().enumerate() {
        let s = sigma[idx];
        if s > negligible {
            singular_values.push(s);
            jac_left.push(cols[idx].iter().map(|x| x / s).collect());
        } else {
            singular_values.push(0.0);
            jac_left.push(vec![0.0; p]);
            missing.push(slot);
        }
        jac_right.push(rot[idx].clone());
    }
    for slot in missing {
        let filled: Vec<&[f64]> = jac_left
            .iter()
            .enumerate()
            .filter(|(k, v)| *k != slot && v.iter().any(|&x| x != 0.0))
            .map(|(_, v)| v.as_slice())
            .collect();
        let fresh = orthonormal_completion(p, &filled);
        jac_left[slot] = fresh;
    }

    let (mut left, mut right) = if transposed {
        (jac_right, jac_left)
    } else {
        (jac_left, jac_right)
    };
    for (u, v) in left.iter_mut().zip(right.iter_mut()) {
        let mut pivot = 0;
        for (k, x) in u.iter().enumerate() {
            if x.abs() > u[pivot].abs() {
                pivot = k;
            }
        }
        if u[pivot] < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }

    Ok(SvdResult {
        singular_values,
        left_vectors: DenseMatrix::from_columns(w.rows, &left),
        right_vectors: DenseMatrix::from_columns(w.cols, &right),
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// A unit vector in `R^dim` orthogonal to every vector in `basis`
/// (assumed orthonormal, fewer than `dim` of them).
fn orthonormal_completion(dim: usize, basis: &[&[f64]]) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 0..dim {
        let mut cand = vec![0.0; dim];
        cand[k] = 1.0;
        // two Gram-Schmidt passes
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&cand, b);
                for (c, &bv) in cand.iter_mut().zip(b.iter()) {
                    *c -= proj * bv;
                }
            }
        }
        let n = dot(&cand, &cand).sqrt();
        if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
            best = Some((n, cand));
        }
    }
    let (n, mut v) = best.expect("dim > 0");
    v.iter_mut().for_each(|x| *x /= n);
    v
}
