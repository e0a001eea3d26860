//! Exact batch PCA through the covariance eigendecomposition, plus subspace
//! comparison utilities. This is the ground truth that the streaming tracker
//! is tested against.

use crate::error::{CoreError, Result};
use crate::linalg::{self, DenseMatrix};

/// Batch spectrum of a dataset: covariance, top eigenpairs and sample mean.
#[derive(Debug, Clone)]
pub struct SpectrumEstimate {
    /// Full sample covariance `(1/M) Z^T Z` of the centered data, N x N.
    pub covariance: DenseMatrix,
    /// Top eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Matching eigenvectors as orthonormal columns, N x q.
    pub eigenvectors: DenseMatrix,
    /// Sample mean that was subtracted.
    pub sample_mean: Vec<f64>,
}

/// Exact PCA of `data` (rows are samples), restricted to the top `q`
/// eigenpairs. Covariance uses 1/M normalization so the loss identity
/// `E||z - C C^T z||^2 = tr(S) - tr(C^T S C)` is exact in sample form.
pub fn batch_pca(data: &DenseMatrix, q: usize) -> Result<SpectrumEstimate> {
    let m = data.rows();
    let n = data.cols();
    if m < 2 {
        return Err(CoreError::InvalidArgument(
            "batch PCA needs at least 2 samples".into(),
        ));
    }
    if q == 0 || q > n {
        return Err(CoreError::InvalidArgument(format!(
            "need 1 <= q <= {n}, got {q}"
        )));
    }

    let mut sample_mean = vec![0.0; n];
    for r in 0..m {
        for (s, &v) in sample_mean.iter_mut().zip(data.row(r)) {
            *s += v;
        }
    }
    for s in sample_mean.iter_mut() {
        *s /= m as f64;
    }

    let mut covariance = DenseMatrix::zeros(n, n);
    for r in 0..m {
        let row = data.row(r);
        for i in 0..n {
            let zi = row[i] - sample_mean[i];
            for j in i..n {
                covariance[(i, j)] += zi * (row[j] - sample_mean[j]);
            }
        }
    }
    let inv_m = 1.0 / m as f64;
    for i in 0..n {
        for j in i..n {
            covariance[(i, j)] *= inv_m;
            covariance[(j, i)] = covariance[(i, j)];
        }
    }

    let eig = linalg::sym_eig(&covariance)?;
    let eigenvalues = eig.eigenvalues[..q].to_vec();
    let mut eigenvectors = DenseMatrix::zeros(n, q);
    for i in 0..n {
        for j in 0..q {
            eigenvectors[(i, j)] = eig.eigenvectors[(i, j)];
        }
    }
    Ok(SpectrumEstimate {
        covariance,
        eigenvalues,
        eigenvectors,
        sample_mean,
    })
}

/// Principal angles between the column spans of two orthonormal N x k
/// matrices, in ascending order within [0, pi/2]. The subspaces coincide iff
/// all angles are zero.
pub fn principal_angles(a: &DenseMatrix, b: &DenseMatrix) -> Result<Vec<f64>> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(CoreError::DimensionMismatch(format!(
            "subspace bases have shapes {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    for (name, m) in [("first", a), ("second", b)] {
        let gram = linalg::matmul(&m.transpose(), m)?;
        if gram.distance_to_identity() > 1e-6 {
            return Err(CoreError::InvalidArgument(format!(
                "{name} basis is not column-orthonormal"
            )));
        }
    }
    // Singular values of A^T B via the eigenvalues of (A^T B)^T (A^T B).
    let cross = linalg::matmul(&a.transpose(), b)?;
    let gram = linalg::matmul(&cross.transpose(), &cross)?;
    let eig = linalg::sym_eig(&gram)?;
    Ok(eig
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt().clamp(-1.0, 1.0).acos())
        .collect())
}

/// Mean squared residual of projecting `data` (centered by its own sample
/// mean) onto the span of the orthonormal basis `c`.
pub fn reconstruction_mse(c: &DenseMatrix, data: &DenseMatrix) -> Result<f64> {
    let n = data.cols();
    if c.rows() != n {
        return Err(CoreError::DimensionMismatch(format!(
            "basis has {} rows, data has {n} columns",
            c.rows()
        )));
    }
    let m = data.rows();
    let q = c.cols();

    let mut sample_mean = vec![0.0; n];
    for r in 0..m {
        for (s, &v) in sample_mean.iter_mut().zip(data.row(r)) {
            *s += v;
        }
    }
    for s in sample_mean.iter_mut() {
        *s /= m as f64;
    }

    let mut total = 0.0;
    let mut y = vec![0.0; q];
    let mut zhat = vec![0.0; n];
    for r in 0..m {
        let row = data.row(r);
        for (j, yj) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..n {
                acc += c[(i, j)] * (row[i] - sample_mean[i]);
            }
            *yj = acc;
        }
        for (i, zi) in zhat.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &yj) in y.iter().enumerate() {
                acc += c[(i, j)] * yj;
            }
            *zi = acc;
        }
        for i in 0..n {
            let residual = (row[i] - sample_mean[i]) - zhat[i];
            total += residual * residual;
        }
    }
    Ok(total / m as f64)
}
