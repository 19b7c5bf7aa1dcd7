//! Dense factorizations: Cholesky for symmetric positive-definite solves and
//! one-sided Jacobi for the singular value decomposition.

use thiserror::Error;

use crate::matrix::{dot, Matrix};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("singular value decomposition did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(a: &Matrix<T>) -> Result<Self, LinalgError> {
        let n = a.rows();
        if a.cols() != n {
            return Err(LinalgError::DimensionMismatch { expected: n, found: a.cols() });
        }
        if !a.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let diag = a[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
            if !(diag > T::zero()) {
                return Err(LinalgError::NotPositiveDefinite { column: j, pivot: diag.to_f64_lossless() });
            }
            let d = diag.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                l[(i, j)] = s / d;
            }
        }
        Ok(Cholesky { lower: l })
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    /// Solves `A X = B` for every column of `B`.
    pub fn solve(&self, b: &Matrix<T>) -> Result<Matrix<T>, LinalgError> {
        let n = self.lower.rows();
        if b.rows() != n {
            return Err(LinalgError::DimensionMismatch { expected: n, found: b.rows() });
        }
        let l = &self.lower;
        let mut x = b.clone();
        let k = b.cols();
        // forward: L y = b
        for i in 0..n {
            for c in 0..k {
                let mut s = x[(i, c)];
                for p in 0..i {
                    s = s - l[(i, p)] * x[(p, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            for c in 0..k {
                let mut s = x[(i, c)];
                for p in (i + 1)..n {
                    s = s - l[(p, i)] * x[(p, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
        }
        Ok(x)
    }
}

/// Thin singular value decomposition `A = U diag(σ) Vᵀ` of an `m × n` matrix with `m ≥ n`.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    /// `m × n`, orthonormal columns for every non-zero singular value.
    pub u: Matrix<T>,
    /// Descending, non-negative.
    pub sigma: Vec<T>,
    /// `n × n` orthogonal.
    pub v: Matrix<T>,
}

const MAX_SWEEPS: usize = 80;

impl<T: Real> Svd<T> {
    /// One-sided (Hestenes) Jacobi iteration on the columns of `a`.
    pub fn compute(a: &Matrix<T>) -> Result<Self, LinalgError> {
        let (m, n) = a.shape();
        if m < n {
            return Err(LinalgError::DimensionMismatch { expected: n, found: m });
        }
        if !a.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        // column-major working copies
        let mut cols: Vec<Vec<T>> = (0..n).map(|j| a.column(j)).collect();
        let mut vcols: Vec<Vec<T>> =
            (0..n).map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect()).collect();
        let tol = T::eps() * T::of_usize(m.max(1));
        // pairs whose inner product is below this are treated as orthogonal;
        // without it, numerically null columns keep rotating forever
        let floor = tol * a.as_slice().iter().map(|&x| x * x).sum::<T>();

        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let alpha = dot(&cols[p], &cols[p]);
                    let beta = dot(&cols[q], &cols[q]);
                    let gamma = dot(&cols[p], &cols[q]);
                    if gamma.abs() <= floor || gamma.abs() <= tol * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let two = T::of(2.0);
                    let zeta = (beta - alpha) / (two * gamma);
                    let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = c * t;
                    rotate(&mut cols, p, q, c, s);
                    rotate(&mut vcols, p, q, c, s);
                }
            }
            if !rotated {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(LinalgError::NoConvergence { sweeps: MAX_SWEEPS });
        }

        let mut order: Vec<(usize, T)> = cols.iter().map(|c| dot(c, c).sqrt()).enumerate().collect();
        if order.iter().any(|(_, s)| !s.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        order.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite singular values").then(a.0.cmp(&b.0)));

        let mut u = Matrix::zeros(m, n);
        let mut v = Matrix::zeros(n, n);
        let mut sigma = Vec::with_capacity(n);
        for (k, &(j, s)) in order.iter().enumerate() {
            sigma.push(s);
            if s > T::zero() {
                for i in 0..m {
                    u[(i, k)] = cols[j][i] / s;
                }
            }
            for i in 0..n {
                v[(i, k)] = vcols[j][i];
            }
        }
        Ok(Svd { u, sigma, v })
    }

    /// `Σ_{k<t} σ_k u_k v_kᵀ`.
    pub fn reconstruct(&self, t: usize) -> Matrix<T> {
        low_rank_product(&self.u, &self.sigma[..t.min(self.sigma.len())], &self.v)
    }
}

/// `U[:, :t] diag(σ) V[:, :t]ᵀ` where `t = sigma.len()`.
pub fn low_rank_product<T: Real>(u: &Matrix<T>, sigma: &[T], v: &Matrix<T>) -> Matrix<T> {
    let (m, n) = (u.rows(), v.rows());
    let mut out = Matrix::zeros(m, n);
    for (k, &s) in sigma.iter().enumerate() {
        if s == T::zero() {
            continue;
        }
        for i in 0..m {
            let a = u[(i, k)] * s;
            if a == T::zero() {
                continue;
            }
            for j in 0..n {
                out[(i, j)] = out[(i, j)] + a * v[(j, k)];
            }
        }
    }
    out
}

fn rotate<T: Real>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}
