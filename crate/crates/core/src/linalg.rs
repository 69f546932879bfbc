//! Small dense linear-algebra kernels: a Cholesky factorization for the
//! symmetric positive-definite solves and a Jacobi eigensolver used to check
//! spectra of small symmetric matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    /// Factor `m = L Lᵀ`. Fails with `NumericalFailure` if a pivot is not
    /// strictly positive, i.e. the matrix is not positive definite.
    pub fn new(m: &ArrayView2<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "cholesky needs a square matrix, got {}x{}",
                n,
                m.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut diag = m[[j, j]];
            for k in 0..j {
                diag -= l[[j, k]] * l[[j, k]];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NumericalFailure(format!(
                    "non-positive pivot {diag:e} at column {j} during Cholesky"
                )));
            }
            let diag = diag.sqrt();
            l[[j, j]] = diag;
            for i in (j + 1)..n {
                let mut v = m[[i, j]];
                for k in 0..j {
                    v -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = v / diag;
            }
        }
        Ok(Self { lower: l })
    }

    /// Solve `m x = rhs` for a single right-hand side.
    pub fn solve_vec(&self, rhs: &ArrayView1<f64>) -> Array1<f64> {
        let n = self.lower.nrows();
        let mut x = rhs.to_owned();
        // forward: L y = rhs
        for i in 0..n {
            let mut v = x[i];
            for k in 0..i {
                v -= self.lower[[i, k]] * x[k];
            }
            x[i] = v / self.lower[[i, i]];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut v = x[i];
            for k in (i + 1)..n {
                v -= self.lower[[k, i]] * x[k];
            }
            x[i] = v / self.lower[[i, i]];
        }
        x
    }

    /// Solve `m X = rhs` column by column.
    pub fn solve_mat(&self, rhs: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(rhs.raw_dim());
        for (j, col) in rhs.columns().into_iter().enumerate() {
            let x = self.solve_vec(&col);
            out.column_mut(j).assign(&x);
        }
        out
    }
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method.
///
/// Intended for small matrices (diagnostics and tests); returns the
/// eigenvalues in ascending order.
pub fn symmetric_eigenvalues(m: &ArrayView2<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigensolver needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    let mut a = m.to_owned();
    // symmetrize defensively; the Jacobi sweep assumes a[i,j] == a[j,i]
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(eigs)
}
