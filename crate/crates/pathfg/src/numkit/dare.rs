//! Discrete algebraic Riccati equation.

use nalgebra::DMatrix;
use thiserror::Error;

use super::{is_symmetric_psd, min_symmetric_eigenvalue, spectral_radius};

#[derive(Debug, Error)]
pub enum DareError {
    #[error("dimension mismatch between A ({a}x{a}) and B ({brows}x{bcols})")]
    DimensionMismatch { a: usize, brows: usize, bcols: usize },
    #[error("Q must be symmetric positive semidefinite")]
    BadQ,
    #[error("R must be symmetric positive definite")]
    BadR,
    #[error("R + B'PB became singular")]
    SingularInnerTerm,
    #[error("iteration diverged; (A, B) is likely not stabilizable")]
    Diverged,
    #[error("no convergence within {max_iter} iterations (last residual {residual:.3e})")]
    NoConvergence { max_iter: usize, residual: f64 },
}

/// Solves `P = Q + A'PA - (A'PB)(R + B'PB)^-1 (B'PA)` by fixed-point
/// (Riccati) iteration from `P0 = Q`, and returns `(P, K)` with
/// `K = (R + B'PB)^-1 B'PA`.
///
/// Convergence is declared when the Frobenius norm of successive iterate
/// differences drops below `tol`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), DareError> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(DareError::DimensionMismatch {
            a: n,
            brows: b.nrows(),
            bcols: b.ncols(),
        });
    }
    let nu = b.ncols();
    if q.nrows() != n || q.ncols() != n {
        return Err(DareError::BadQ);
    }
    if r.nrows() != nu || r.ncols() != nu {
        return Err(DareError::BadR);
    }
    if !is_symmetric_psd(q, 1e-9, 1e-9) {
        return Err(DareError::BadQ);
    }
    if !is_symmetric_psd(r, 1e-9, 0.0) || min_symmetric_eigenvalue(r) <= 1e-12 {
        return Err(DareError::BadR);
    }

    let max_iter = 500_000usize;
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let btp = b.transpose() * &p;
        let inner = r + &btp * b;
        let k = inner
            .clone()
            .cholesky()
            .ok_or(DareError::SingularInnerTerm)?
            .solve(&(&btp * a));
        let atpa = a.transpose() * &p * a;
        let next = q + atpa - (a.transpose() * &p * b) * &k;
        let next = (&next + next.transpose()) * 0.5;
        residual = (&next - &p).norm();
        p = next;
        if !residual.is_finite() || p.norm() > 1e12 {
            return Err(DareError::Diverged);
        }
        if residual <= tol {
            let btp = b.transpose() * &p;
            let inner = r + &btp * b;
            let k = inner
                .cholesky()
                .ok_or(DareError::SingularInnerTerm)?
                .solve(&(&btp * a));
            // closed-loop must be strictly stable, else the fixed point is spurious
            let acl = a - b * &k;
            if spectral_radius(&acl) >= 1.0 {
                return Err(DareError::Diverged);
            }
            return Ok((p, k));
        }
    }
    Err(DareError::NoConvergence { max_iter, residual })
}
