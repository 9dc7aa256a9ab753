//! Dense symmetric matrices and the spectral utilities the estimators need:
//! operator norm, effective rank, a Jacobi eigensolver, and the PSD square
//! root used for Gaussian sampling.
//!
//! Everything here is plain dense `f64` storage. The dimensions in play are
//! small (tens), so an O(d³) Jacobi sweep is cheap and keeps the crate free
//! of external linear algebra dependencies.

use thiserror::Error;

/// Maximum number of full Jacobi sweeps before giving up.
const MAX_SWEEPS: usize = 100;
/// Convergence threshold on the off-diagonal Frobenius norm, relative to the
/// Frobenius norm of the input.
const OFF_DIAG_TOL: f64 = 1e-12;
/// Eigenvalues above `-PSD_TOL * ||m||_op` count as nonnegative and are
/// clamped to zero when factorizing.
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("matrix is not positive semi-definite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },
    #[error("operation undefined for the zero matrix")]
    ZeroMatrix,
    #[error("eigensolver did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("expected {expected} entries, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("dimension must be at least 1")]
    ZeroDim,
}

/// Dense real symmetric matrix, stored as a full row-major `d × d` block.
///
/// Symmetry is enforced at construction: [`SymMatrix::from_entries`]
/// averages mirrored pairs, and every other constructor only ever writes
/// both `(i, j)` and `(j, i)` together.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        SymMatrix {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.entries[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds a symmetric matrix from row-major entries, symmetrizing by
    /// averaging each `(i, j)`/`(j, i)` pair.
    pub fn from_entries(dim: usize, entries: Vec<f64>) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::ZeroDim);
        }
        if entries.len() != dim * dim {
            return Err(LinalgError::BadLength {
                expected: dim * dim,
                actual: entries.len(),
            });
        }
        let mut m = SymMatrix { dim, entries };
        for i in 0..dim {
            for j in (i + 1)..dim {
                let avg = 0.5 * (m.entries[i * dim + j] + m.entries[j * dim + i]);
                m.entries[i * dim + j] = avg;
                m.entries[j * dim + i] = avg;
            }
        }
        Ok(m)
    }

    /// Builds a symmetric matrix by evaluating `f` on the upper triangle
    /// (`i <= j`) and mirroring, so the result is exactly symmetric.
    pub fn from_upper<F: FnMut(usize, usize) -> f64>(dim: usize, mut f: F) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.entries[i * dim + j] = v;
                m.entries[j * dim + i] = v;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.dim + j] = v;
        self.entries[j * self.dim + i] = v;
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Largest entry in absolute value.
    pub fn max_abs_entry(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.is_finite())
    }

    /// Entrywise difference `self - other`.
    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix, LinalgError> {
        if self.dim != other.dim {
            return Err(LinalgError::DimMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a - b)
            .collect();
        Ok(SymMatrix {
            dim: self.dim,
            entries,
        })
    }

    pub fn scaled(&self, c: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            entries: self.entries.iter().map(|e| c * e).collect(),
        }
    }

    /// Operator norm: the largest eigenvalue magnitude.
    pub fn operator_norm(&self) -> Result<f64, LinalgError> {
        if !self.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let eig = self.sym_eigen()?;
        let first = eig.values[0].abs();
        let last = eig.values[self.dim - 1].abs();
        Ok(first.max(last))
    }

    /// Effective rank `trace / operator_norm`; lies in `[1, dim]` for
    /// nonzero PSD matrices.
    pub fn effective_rank(&self) -> Result<f64, LinalgError> {
        let norm = self.operator_norm()?;
        if norm == 0.0 {
            return Err(LinalgError::ZeroMatrix);
        }
        Ok(self.trace() / norm)
    }

    /// Full symmetric eigendecomposition by cyclic Jacobi rotations.
    ///
    /// Returns eigenvalues in descending order with matching orthonormal
    /// eigenvector columns, so `self == V · diag(values) · Vᵀ`.
    pub fn sym_eigen(&self) -> Result<SymEigen, LinalgError> {
        if !self.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let d = self.dim;
        let mut a = self.entries.clone();
        let mut v = Mat::identity(d);
        let frob = self.frobenius_norm();
        if frob == 0.0 {
            return Ok(SymEigen {
                values: vec![0.0; d],
                vectors: v,
            });
        }
        let tol = OFF_DIAG_TOL * frob;
        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            if off_diag_frobenius(&a, d) <= tol {
                converged = true;
                break;
            }
            for p in 0..d - 1 {
                for q in (p + 1)..d {
                    jacobi_rotate(&mut a, &mut v.data, d, p, q);
                }
            }
        }
        if !converged && off_diag_frobenius(&a, d) > tol {
            return Err(LinalgError::NoConvergence(MAX_SWEEPS));
        }

        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| a[j * d + j].partial_cmp(&a[i * d + i]).unwrap());
        let values: Vec<f64> = order.iter().map(|&k| a[k * d + k]).collect();
        let mut vectors = Mat::zeros(d, d);
        for (new_col, &old_col) in order.iter().enumerate() {
            for row in 0..d {
                vectors.data[row * d + new_col] = v.data[row * d + old_col];
            }
        }
        Ok(SymEigen { values, vectors })
    }

    /// A factor `L` with `L · Lᵀ == self`, built as `V · diag(√λ)` from the
    /// eigendecomposition. Eigenvalues within the PSD tolerance are clamped
    /// to zero; anything more negative is rejected.
    pub fn sampling_factor(&self) -> Result<Mat, LinalgError> {
        let eig = self.sym_eigen()?;
        let d = self.dim;
        let norm = eig.values[0].abs().max(eig.values[d - 1].abs());
        let min_eig = eig.values[d - 1];
        if min_eig < -PSD_TOL * norm {
            return Err(LinalgError::NotPsd { min_eig });
        }
        let mut l = Mat::zeros(d, d);
        for k in 0..d {
            let root = eig.values[k].max(0.0).sqrt();
            for i in 0..d {
                l.data[i * d + k] = eig.vectors.data[i * d + k] * root;
            }
        }
        Ok(l)
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.entries[i * self.dim + j]
    }
}

fn off_diag_frobenius(a: &[f64], d: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            sum += a[i * d + j] * a[i * d + j];
        }
    }
    (2.0 * sum).sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`, applied to the full matrix
/// and accumulated into the eigenvector columns.
fn jacobi_rotate(a: &mut [f64], v: &mut [f64], d: usize, p: usize, q: usize) {
    let apq = a[p * d + q];
    if apq == 0.0 {
        return;
    }
    let theta = 0.5 * (a[q * d + q] - a[p * d + p]) / apq;
    let t = if theta.abs() > 1e150 {
        // theta² would overflow; the rotation angle is effectively 1/(2θ)
        0.5 / theta
    } else {
        let root = (1.0 + theta * theta).sqrt();
        if theta >= 0.0 {
            1.0 / (theta + root)
        } else {
            1.0 / (theta - root)
        }
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let tau = s / (1.0 + c);
    let h = t * apq;

    a[p * d + p] -= h;
    a[q * d + q] += h;
    a[p * d + q] = 0.0;
    a[q * d + p] = 0.0;
    for k in 0..d {
        if k == p || k == q {
            continue;
        }
        let akp = a[k * d + p];
        let akq = a[k * d + q];
        let nkp = akp - s * (akq + akp * tau);
        let nkq = akq + s * (akp - akq * tau);
        a[k * d + p] = nkp;
        a[p * d + k] = nkp;
        a[k * d + q] = nkq;
        a[q * d + k] = nkq;
    }
    for k in 0..d {
        let vkp = v[k * d + p];
        let vkq = v[k * d + q];
        v[k * d + p] = vkp - s * (vkq + vkp * tau);
        v[k * d + q] = vkq + s * (vkp - vkq * tau);
    }
}

/// Eigendecomposition of a symmetric matrix: `values` descending,
/// eigenvector `k` in column `k` of `vectors`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

/// Minimal dense row-major matrix, used for eigenvector blocks and the
/// Gaussian sampling factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.data[i * self.cols + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += aik * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn transposed(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

/// The structured covariance family used throughout the experiments:
/// diagonal `[c, a, ..., a]` and constant off-diagonal `b`, i.e.
/// `(a−b)·I + b·𝟙𝟙ᵀ + (c−a)·e₁e₁ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub dim: usize,
}

impl SigmaSpec {
    pub fn new(a: f64, b: f64, c: f64, dim: usize) -> Self {
        SigmaSpec { a, b, c, dim }
    }

    pub fn with_dim(self, dim: usize) -> Self {
        SigmaSpec { dim, ..self }
    }

    /// Materializes the matrix, rejecting parameter combinations that are
    /// not positive semi-definite.
    pub fn materialize(&self) -> Result<SymMatrix, LinalgError> {
        make_sigma(self)
    }
}

/// Builds the `SigmaSpec` matrix and verifies positive semi-definiteness:
/// the smallest eigenvalue must be at least `-1e-10` times the operator
/// norm.
pub fn make_sigma(spec: &SigmaSpec) -> Result<SymMatrix, LinalgError> {
    if spec.dim == 0 {
        return Err(LinalgError::ZeroDim);
    }
    let m = SymMatrix::from_upper(spec.dim, |i, j| {
        if i == j {
            if i == 0 {
                spec.c
            } else {
                spec.a
            }
        } else {
            spec.b
        }
    });
    let eig = m.sym_eigen()?;
    let norm = eig.values[0].abs().max(eig.values[spec.dim - 1].abs());
    let min_eig = eig.values[spec.dim - 1];
    if min_eig < -PSD_TOL * norm {
        return Err(LinalgError::NotPsd { min_eig });
    }
    Ok(m)
}
