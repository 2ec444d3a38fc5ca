//! Dense numerical kernels shared by the rest of the crate: a convex QP
//! solver based on operator splitting, and a discrete algebraic Riccati
//! equation solver.

mod dare;
mod qp;

pub use dare::{solve_dare, DareError};
pub use qp::{solve_qp, solve_qp_warm, QpError, QpProblem, QpSolution, QpStatus};

use nalgebra::DMatrix;

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Checks symmetry to `sym_tol` and positive semidefiniteness to `eig_tol`.
pub fn is_symmetric_psd(m: &DMatrix<f64>, sym_tol: f64, eig_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > sym_tol {
        return false;
    }
    min_symmetric_eigenvalue(m) >= -eig_tol
}

/// Spectral radius via the real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}
