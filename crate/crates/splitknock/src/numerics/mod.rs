//! Dense linear algebra primitives shared by the whole pipeline. All
//! operations are deterministic functions of their inputs; tolerances scale
//! with the matrix norm so they survive nu-rescaled Gram matrices.

mod rng;

pub use rng::{sample_ar1_design, Rng};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Dense symmetric matrix, symmetrized on construction so that
/// `entries[(i, j)] == entries[(j, i)]` holds exactly as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    entries: DMatrix<f64>,
}

impl SymMatrix {
    /// Symmetrizes `m` as (M + M^T) / 2.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut entries = m;
        for i in 0..entries.nrows() {
            for j in (i + 1)..entries.ncols() {
                let v = 0.5 * (entries[(i, j)] + entries[(j, i)]);
                entries[(i, j)] = v;
                entries[(j, i)] = v;
            }
        }
        Ok(Self { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    fn check_finite(&self) -> Result<()> {
        for j in 0..self.entries.ncols() {
            for i in 0..self.entries.nrows() {
                if !self.entries[(i, j)].is_finite() {
                    return Err(Error::NonFiniteInput { row: i, col: j });
                }
            }
        }
        Ok(())
    }
}

/// sign(x) * max(|x| - t, 0) for t >= 0.
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Eigendecomposition of a symmetric matrix: eigenvalues ascending, columns
/// of the returned matrix are the matching orthonormal eigenvectors.
pub fn sym_eigen(m: &SymMatrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
    m.check_finite()?;
    let eig = m.entries.clone().symmetric_eigen();
    let dim = m.dim();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(dim, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(dim, dim);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    let (values, _) = sym_eigen(m)?;
    Ok(values[0])
}

/// Symmetric PSD square root K with K^T K = M. Eigenvalues within
/// -1e-8 * ||M||_F of zero are clamped to zero before the root; anything more
/// negative is rejected. The boundary case matters: the equi-correlated s
/// puts 2 diag(s) - diag(s) C^-1 diag(s) exactly on the PSD boundary.
pub fn psd_sqrt(m: &SymMatrix) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(m)?;
    let scale = m.entries.norm();
    let tol = 1e-8 * scale;
    if values[0] < -tol {
        return Err(Error::NotPositiveSemidefinite {
            min_eig: values[0],
            tol,
        });
    }
    let roots = DVector::from_iterator(m.dim(), values.iter().map(|&v| v.max(0.0).sqrt()));
    let mut scaled = vectors.clone();
    for (j, r) in roots.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*r);
    }
    Ok(scaled * vectors.transpose())
}

/// Orthonormal basis of a k-dimensional subspace orthogonal to the columns of
/// `b`, built from a Householder QR over the columns of `b` in natural order
/// (so the output is deterministic for a fixed input). Rank-deficient columns
/// are skipped.
pub fn orthonormal_complement(b: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let rows = b.nrows();
    // Householder vectors stored in the lower part of `work`.
    let mut work = b.clone();
    let scale = b.norm().max(1.0);
    let mut reflectors: Vec<DVector<f64>> = Vec::new();
    for col in 0..work.ncols() {
        let t = reflectors.len();
        if t == rows {
            break;
        }
        let mut x = DVector::zeros(rows - t);
        for i in t..rows {
            x[i - t] = work[(i, col)];
        }
        let norm = x.norm();
        if norm <= 1e-12 * scale {
            continue; // dependent column
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        x[0] -= alpha;
        let vnorm = x.norm();
        if vnorm <= 0.0 {
            continue;
        }
        x /= vnorm;
        // Apply the reflection to the remaining columns.
        for j in col..work.ncols() {
            let mut dot = 0.0;
            for i in t..rows {
                dot += x[i - t] * work[(i, j)];
            }
            for i in t..rows {
                work[(i, j)] -= 2.0 * dot * x[i - t];
            }
        }
        reflectors.push(x);
    }
    let rank = reflectors.len();
    if rank + k > rows {
        return Err(Error::InsufficientDimension { rank, k, rows });
    }
    // Columns rank..rank+k of Q, obtained by running the reflections
    // backwards over unit vectors.
    let mut u = DMatrix::zeros(rows, k);
    for j in 0..k {
        let mut q = DVector::zeros(rows);
        q[rank + j] = 1.0;
        for (t, v) in reflectors.iter().enumerate().rev() {
            let mut dot = 0.0;
            for i in t..rows {
                dot += v[i - t] * q[i];
            }
            for i in t..rows {
                q[i] -= 2.0 * dot * v[i - t];
            }
        }
        u.set_column(j, &q);
    }
    Ok(u)
}

/// Cholesky factorization of a positive definite matrix, reusable across
/// many right-hand sides.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(m: &SymMatrix) -> Result<Self> {
        m.check_finite()?;
        match Cholesky::new(m.entries.clone()) {
            Some(chol) => Ok(Self { chol }),
            None => Err(Error::NotPositiveDefinite(format!(
                "Cholesky pivot failure on {}x{} matrix",
                m.dim(),
                m.dim()
            ))),
        }
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_vec_mut(&self, rhs: &mut DVector<f64>) {
        self.chol.solve_mut(rhs);
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }
}

/// Solves M x = rhs for positive definite M.
pub fn cholesky_solve(m: &SymMatrix, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(SpdFactor::new(m)?.solve_mat(rhs))
}
