//! Minimal dense linear algebra: row-major matrices, products, symmetric
//! eigendecomposition (cyclic Jacobi), triangular masking and the symmetric
//! inverse square root used for re-orthonormalization.

use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};

/// Maximum Jacobi sweeps before giving up.
const JACOBI_MAX_SWEEPS: usize = 100;
/// Off-diagonal convergence threshold, relative to the Frobenius norm.
const JACOBI_TOL: f64 = 1e-12;
/// Relative asymmetry tolerated by `sym_eig` and `inv_sqrt_sym`.
const SYMMETRY_TOL: f64 = 1e-10;

/// Dense row-major matrix of `f64` entries.
///
/// Construction rejects empty shapes and non-finite entries; everything in
/// this crate assumes those invariants downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CoreError::InvalidArgument(format!(
                "matrix shape {rows}x{cols} has an empty dimension"
            )));
        }
        if data.len() != rows * cols {
            return Err(CoreError::DimensionMismatch(format!(
                "matrix shape {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite(format!(
                "matrix shape {rows}x{cols} contains NaN or infinity"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        debug_assert!(rows > 0 && cols > 0);
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(CoreError::InvalidArgument("no rows given".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(CoreError::DimensionMismatch(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable entry access for in-place parameter updates. The finiteness
    /// invariant is checked at construction only; writers keep it.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)];
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        debug_assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Frobenius distance to the identity; shorthand for orthonormality
    /// checks on Gram matrices.
    pub fn distance_to_identity(&self) -> f64 {
        debug_assert_eq!(self.rows, self.cols);
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                let d = self[(i, j)] - target;
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    fn asymmetry(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let d = self[(i, j)] - self[(j, i)];
                acc += 2.0 * d * d;
            }
        }
        acc.sqrt()
    }

    fn check_symmetric(&self, op: &str) -> Result<()> {
        if !self.is_square() {
            return Err(CoreError::InvalidArgument(format!(
                "{op}: matrix is {}x{}, must be square",
                self.rows, self.cols
            )));
        }
        let norm = self.frobenius_norm();
        if norm > 0.0 && self.asymmetry() > SYMMETRY_TOL * norm {
            return Err(CoreError::InvalidArgument(format!(
                "{op}: matrix is not symmetric (relative asymmetry {:.3e})",
                self.asymmetry() / norm
            )));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Standard matrix product.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(CoreError::DimensionMismatch(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a[(i, k)];
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    if !out.data.iter().all(|v| v.is_finite()) {
        return Err(CoreError::Numerical(
            "matrix product overflowed to a non-finite value".into(),
        ));
    }
    Ok(out)
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymEigDecomposition {
    /// Eigenvalues in non-increasing order.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, permuted to match `eigenvalues`.
    /// Each column is flipped so its largest-magnitude entry is positive.
    pub eigenvectors: DenseMatrix,
}

/// Symmetric eigendecomposition via cyclic Jacobi rotations.
///
/// The input must be square and symmetric within a relative tolerance of
/// 1e-10; it is symmetrized internally before iterating. Sorting and sign
/// conventions make the result deterministic.
pub fn sym_eig(m: &DenseMatrix) -> Result<SymEigDecomposition> {
    m.check_symmetric("sym_eig")?;
    let n = m.rows;

    // Work on the exactly-symmetrized copy.
    let mut a = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = DenseMatrix::identity(n);
    let threshold = JACOBI_TOL * a.frobenius_norm();

    let mut converged = off_diagonal_norm(&a) <= threshold;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                // Large |theta| would overflow theta^2; fall back to the
                // first-order tangent.
                let t = if theta.abs() > 1e154 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                let app = a[(p, p)];
                let aqq = a[(q, q)];
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(p, k)] = a[(k, p)];
                        a[(k, q)] = s * akp + c * akq;
                        a[(q, k)] = a[(k, q)];
                    }
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        converged = off_diagonal_norm(&a) <= threshold;
    }
    if !converged {
        return Err(CoreError::Numerical(format!(
            "Jacobi iteration did not converge within {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    // Sort descending; stable so equal eigenvalues keep their relative order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap());

    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut best = 0usize;
        for k in 1..n {
            if v[(k, src)].abs() > v[(best, src)].abs() {
                best = k;
            }
        }
        let flip = if v[(best, src)] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            eigenvectors[(k, dst)] = flip * v[(k, src)];
        }
    }

    Ok(SymEigDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows;
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += 2.0 * a[(i, j)] * a[(i, j)];
        }
    }
    acc.sqrt()
}

/// Elementwise upper-triangular part of a square matrix, diagonal included.
pub fn upper_triangular(g: &DenseMatrix) -> Result<DenseMatrix> {
    if !g.is_square() {
        return Err(CoreError::InvalidArgument(format!(
            "upper_triangular: matrix is {}x{}, must be square",
            g.rows, g.cols
        )));
    }
    let mut out = g.clone();
    for i in 0..g.rows {
        for j in 0..i {
            out[(i, j)] = 0.0;
        }
    }
    Ok(out)
}

/// Symmetric inverse square root with an eigenvalue floor:
/// `U diag(max(lambda_i, eps))^{-1/2} U^T`.
pub fn inv_sqrt_sym(g: &DenseMatrix, eps: f64) -> Result<DenseMatrix> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "inv_sqrt_sym: eps must be positive, got {eps}"
        )));
    }
    g.check_symmetric("inv_sqrt_sym")?;
    let eig = sym_eig(g)?;
    let n = g.rows;
    let scale: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| 1.0 / l.max(eps).sqrt())
        .collect();

    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for (k, &s) in scale.iter().enumerate() {
                acc += eig.eigenvectors[(i, k)] * s * eig.eigenvectors[(j, k)];
            }
            out[(i, j)] = acc;
            out[(j, i)] = acc;
        }
    }
    Ok(out)
}

/// Random matrix with orthonormal columns: a seeded Gaussian draw followed by
/// symmetric orthonormalization. Requires `cols <= rows`.
pub fn random_orthonormal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Result<DenseMatrix> {
    if cols == 0 || cols > rows {
        return Err(CoreError::InvalidArgument(format!(
            "random_orthonormal: need 1 <= cols <= rows, got {rows}x{cols}"
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(rng.sample::<f64, _>(StandardNormal));
    }
    let a = DenseMatrix::new(rows, cols, data)?;
    let gram = matmul(&a.transpose(), &a)?;
    let correction = inv_sqrt_sym(&gram, 1e-12)?;
    matmul(&a, &correction)
}
