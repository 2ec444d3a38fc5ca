//! Convex QP solver.
//!
//! Minimizes `0.5 x' H x + q' x` subject to `G x <= h` and `A x = b` using
//! an operator-splitting (ADMM) iteration with an active-set polishing step,
//! in the style of OSQP. Dense factorizations only; the problems produced by
//! the condensed MPC formulation have at most a few hundred variables.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::is_symmetric_psd;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("hessian is not symmetric positive semidefinite")]
    NotPsd,
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("iteration limit reached without convergence or certificate (primal residual {primal:.3e}, dual residual {dual:.3e})")]
    MaxIterations { primal: f64, dual: f64 },
}

/// Convex quadratic program `min 0.5 x'Hx + q'x  s.t.  Gx <= h, Ax = b`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear_term: DVector<f64>,
    pub ineq_rows: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub eq_rows: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem.
    pub fn unconstrained(hessian: DMatrix<f64>, linear_term: DVector<f64>) -> Self {
        let n = hessian.ncols();
        QpProblem {
            hessian,
            linear_term,
            ineq_rows: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            eq_rows: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
        }
    }

    pub fn with_inequalities(
        hessian: DMatrix<f64>,
        linear_term: DVector<f64>,
        ineq_rows: DMatrix<f64>,
        ineq_rhs: DVector<f64>,
    ) -> Self {
        let n = hessian.ncols();
        QpProblem {
            hessian,
            linear_term,
            ineq_rows,
            ineq_rhs,
            eq_rows: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
        }
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.hessian.ncols();
        if self.hessian.nrows() != n {
            return Err(QpError::DimensionMismatch("hessian is not square".into()));
        }
        if self.linear_term.len() != n {
            return Err(QpError::DimensionMismatch(format!(
                "linear term has {} entries, expected {}",
                self.linear_term.len(),
                n
            )));
        }
        if self.ineq_rows.ncols() != n && self.ineq_rows.nrows() > 0 {
            return Err(QpError::DimensionMismatch(
                "inequality rows column count does not match hessian".into(),
            ));
        }
        if self.ineq_rows.nrows() != self.ineq_rhs.len() {
            return Err(QpError::DimensionMismatch(format!(
                "{} inequality rows but {} rhs entries",
                self.ineq_rows.nrows(),
                self.ineq_rhs.len()
            )));
        }
        if self.eq_rows.ncols() != n && self.eq_rows.nrows() > 0 {
            return Err(QpError::DimensionMismatch(
                "equality rows column count does not match hessian".into(),
            ));
        }
        if self.eq_rows.nrows() != self.eq_rhs.len() {
            return Err(QpError::DimensionMismatch(format!(
                "{} equality rows but {} rhs entries",
                self.eq_rows.nrows(),
                self.eq_rhs.len()
            )));
        }
        if !is_symmetric_psd(&self.hessian, 1e-9, 1e-9) {
            return Err(QpError::NotPsd);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    pub dual_ineq: DVector<f64>,
    pub dual_eq: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    /// Infinity norm of the primal-infeasibility certificate residual
    /// `C' dy` when status is `Infeasible`, zero otherwise.
    pub infeasibility_residual: f64,
    pub iterations: usize,
}

const ADMM_SIGMA: f64 = 1e-6;
const ADMM_ALPHA: f64 = 1.6;
const CHECK_INTERVAL: usize = 25;
const INFEAS_TOL: f64 = 1e-10;

struct Workspace {
    // stacked constraint matrix [G; A] with bounds l <= Cx <= u
    c: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    n: usize,
    m: usize,
}

impl Workspace {
    fn new(p: &QpProblem) -> Self {
        let n = p.hessian.ncols();
        let mi = p.ineq_rows.nrows();
        let me = p.eq_rows.nrows();
        let m = mi + me;
        let mut c = DMatrix::zeros(m, n);
        let mut l = DVector::from_element(m, f64::NEG_INFINITY);
        let mut u = DVector::zeros(m);
        if mi > 0 {
            c.rows_mut(0, mi).copy_from(&p.ineq_rows);
            u.rows_mut(0, mi).copy_from(&p.ineq_rhs);
        }
        if me > 0 {
            c.rows_mut(mi, me).copy_from(&p.eq_rows);
            l.rows_mut(mi, me).copy_from(&p.eq_rhs);
            u.rows_mut(mi, me).copy_from(&p.eq_rhs);
        }
        Workspace { c, l, u, n, m }
    }
}

/// Solves a convex QP to the requested KKT tolerance.
///
/// `warm_start` optionally seeds the primal iterate. The returned solution is
/// deterministic for fixed inputs.
pub fn solve_qp(problem: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    solve_qp_warm(problem, tol, max_iter, None)
}

pub fn solve_qp_warm(
    problem: &QpProblem,
    tol: f64,
    max_iter: usize,
    warm_start: Option<&DVector<f64>>,
) -> Result<QpSolution, QpError> {
    if tol <= 0.0 {
        return Err(QpError::BadTolerance(tol));
    }
    problem.validate()?;
    let ws = Workspace::new(problem);
    let (n, m) = (ws.n, ws.m);

    if m == 0 {
        // unconstrained: single symmetric solve with tiny regularization
        let reg = &problem.hessian + DMatrix::identity(n, n) * ADMM_SIGMA;
        let x = reg
            .cholesky()
            .map(|ch| ch.solve(&(-&problem.linear_term)))
            .unwrap_or_else(|| DVector::zeros(n));
        let x = refine_unconstrained(&problem.hessian, &problem.linear_term, x);
        let objective = objective_value(problem, &x);
        return Ok(QpSolution {
            primal: x,
            dual_ineq: DVector::zeros(0),
            dual_eq: DVector::zeros(0),
            objective,
            status: QpStatus::Optimal,
            infeasibility_residual: 0.0,
            iterations: 1,
        });
    }

    let mut rho = DVector::from_element(m, 1e-1);
    let mi = problem.ineq_rows.nrows();
    for i in mi..m {
        rho[i] = 1e3; // stiffer penalty on equality rows
    }

    let mut x = warm_start
        .filter(|w| w.len() == n)
        .cloned()
        .unwrap_or_else(|| DVector::zeros(n));
    let mut z = &ws.c * &x;
    clamp_into(&mut z, &ws.l, &ws.u);
    let mut y = DVector::zeros(m);

    let mut kkt = factor(&problem.hessian, &ws.c, &rho);
    let mut last_prim = f64::INFINITY;
    let mut last_dual = f64::INFINITY;

    let mut iter = 0;
    while iter < max_iter {
        iter += 1;
        // x-update
        let mut rhs = DVector::from_element(n, 0.0);
        rhs.axpy(ADMM_SIGMA, &x, 0.0);
        rhs -= &problem.linear_term;
        let mut w = DVector::zeros(m);
        for i in 0..m {
            w[i] = rho[i] * z[i] - y[i];
        }
        rhs += ws.c.transpose() * &w;
        let x_tilde = kkt.solve(&rhs);
        let z_tilde = &ws.c * &x_tilde;

        let x_next = &x_tilde * ADMM_ALPHA + &x * (1.0 - ADMM_ALPHA);
        let mut z_next = DVector::zeros(m);
        for i in 0..m {
            z_next[i] = ADMM_ALPHA * z_tilde[i] + (1.0 - ADMM_ALPHA) * z[i] + y[i] / rho[i];
        }
        clamp_into(&mut z_next, &ws.l, &ws.u);
        let mut y_next = DVector::zeros(m);
        let mut dy = DVector::zeros(m);
        for i in 0..m {
            let step = rho[i] * (ADMM_ALPHA * z_tilde[i] + (1.0 - ADMM_ALPHA) * z[i] - z_next[i]);
            y_next[i] = y[i] + step;
            dy[i] = y_next[i] - y[i];
        }

        let converged_check = iter % CHECK_INTERVAL == 0 || iter == max_iter;
        if converged_check {
            let cx = &ws.c * &x_next;
            let mut prim = 0.0f64;
            for i in 0..m {
                let v = (cx[i] - ws.u[i]).max(ws.l[i] - cx[i]).max(0.0);
                prim = prim.max(v);
            }
            let dual_vec = &problem.hessian * &x_next + &problem.linear_term + ws.c.transpose() * &y_next;
            let dual = dual_vec.abs().max();
            last_prim = prim;
            last_dual = dual;

            // loose ADMM convergence; polishing recovers full accuracy
            let eps_admm = (tol * 10.0).max(1e-10).max(tol);
            if prim <= eps_admm && dual <= eps_admm.max(1e-6) {
                if let Some(sol) = polish(problem, &ws, &x_next, &y_next, tol) {
                    return Ok(sol);
                }
                // polish failed; accept only if raw iterate already meets tol
                if prim <= tol && dual <= tol {
                    return Ok(finish(problem, &ws, x_next, y_next, iter));
                }
            }

            if let Some(res) = infeasibility_certificate(&ws, &dy) {
                return Ok(QpSolution {
                    primal: x_next,
                    dual_ineq: dy.rows(0, mi).into_owned(),
                    dual_eq: dy.rows(mi, m - mi).into_owned(),
                    objective: f64::INFINITY,
                    status: QpStatus::Infeasible,
                    infeasibility_residual: res,
                    iterations: iter,
                });
            }

            // adaptive penalty
            if prim > 1e-18 && dual > 1e-18 {
                let ratio = (prim / dual).sqrt();
                if ratio > 5.0 || ratio < 0.2 {
                    for i in 0..m {
                        rho[i] = (rho[i] * ratio).clamp(1e-6, 1e6);
                    }
                    kkt = factor(&problem.hessian, &ws.c, &rho);
                }
            }
        }

        x = x_next;
        z = z_next;
        y = y_next;
    }

    // last-resort polish before giving up
    if let Some(sol) = polish(problem, &ws, &x, &y, tol) {
        return Ok(sol);
    }
    Err(QpError::MaxIterations {
        primal: last_prim,
        dual: last_dual,
    })
}

fn clamp_into(v: &mut DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) {
    for i in 0..v.len() {
        v[i] = v[i].clamp(l[i], u[i]);
    }
}

struct KktFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl KktFactor {
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

fn factor(h: &DMatrix<f64>, c: &DMatrix<f64>, rho: &DVector<f64>) -> KktFactor {
    let n = h.ncols();
    let mut k = h.clone();
    for i in 0..n {
        k[(i, i)] += ADMM_SIGMA;
    }
    let mut scaled = c.clone();
    for i in 0..c.nrows() {
        let r = rho[i];
        for j in 0..n {
            scaled[(i, j)] *= r;
        }
    }
    k += c.transpose() * scaled;
    let chol = k
        .clone()
        .cholesky()
        .unwrap_or_else(|| (k + DMatrix::identity(n, n) * 1e-8).cholesky().expect("kkt factorization"));
    KktFactor { chol }
}

fn objective_value(p: &QpProblem, x: &DVector<f64>) -> f64 {
    0.5 * (x.transpose() * &p.hessian * x)[(0, 0)] + p.linear_term.dot(x)
}

fn refine_unconstrained(h: &DMatrix<f64>, q: &DVector<f64>, mut x: DVector<f64>) -> DVector<f64> {
    let n = h.ncols();
    let reg = h + DMatrix::identity(n, n) * ADMM_SIGMA;
    if let Some(ch) = reg.cholesky() {
        for _ in 0..3 {
            let r = -(h * &x) - q;
            x += ch.solve(&r);
        }
    }
    x
}

/// OSQP-style primal infeasibility certificate on the dual step `dy`.
fn infeasibility_certificate(ws: &Workspace, dy: &DVector<f64>) -> Option<f64> {
    let norm = dy.abs().max();
    if norm < 1e-12 {
        return None;
    }
    let dyn_ = dy / norm;
    // rows with l = -inf must have nonnegative multiplier direction
    for i in 0..ws.m {
        if ws.l[i] == f64::NEG_INFINITY && dyn_[i] < -INFEAS_TOL {
            return None;
        }
    }
    let ct_dy = ws.c.transpose() * &dyn_;
    let res = ct_dy.abs().max();
    if res > 1e-8 {
        return None;
    }
    let mut support = 0.0;
    for i in 0..ws.m {
        if dyn_[i] > 0.0 {
            support += ws.u[i] * dyn_[i];
        } else if dyn_[i] < 0.0 {
            // only finite lower bounds can reach here
            support += ws.l[i] * dyn_[i];
        }
    }
    if support < -1e-10 {
        Some(res)
    } else {
        None
    }
}

/// Active-set polish: equality-solve on the detected active constraints with
/// regularized KKT and iterative refinement, then exact KKT verification.
fn polish(
    problem: &QpProblem,
    ws: &Workspace,
    x: &DVector<f64>,
    y: &DVector<f64>,
    tol: f64,
) -> Option<QpSolution> {
    let (n, m) = (ws.n, ws.m);
    let mi = problem.ineq_rows.nrows();
    let cx = &ws.c * x;
    let mut active: Vec<usize> = Vec::new();
    for i in 0..m {
        let eq_row = i >= mi;
        if eq_row || y[i] > 1e-10 || cx[i] > ws.u[i] - 1e-7 {
            active.push(i);
        }
    }
    let na = active.len();
    let mut a = DMatrix::zeros(na, n);
    let mut b = DVector::zeros(na);
    for (k, &i) in active.iter().enumerate() {
        a.row_mut(k).copy_from(&ws.c.row(i));
        b[k] = ws.u[i];
    }

    // [H  A'; A  -delta I] (lambda, regularized), refined
    let dim = n + na;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
    for i in 0..n {
        kkt[(i, i)] += 1e-9;
    }
    if na > 0 {
        kkt.view_mut((0, n), (n, na)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (na, n)).copy_from(&a);
        for i in 0..na {
            kkt[(n + i, n + i)] = -1e-9;
        }
    }
    let lu = kkt.clone().lu();
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&problem.linear_term));
    if na > 0 {
        rhs.rows_mut(n, na).copy_from(&b);
    }
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..4 {
        let resid = &rhs - &kkt_mul(&problem.hessian, &a, &sol, 1e-9);
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        } else {
            break;
        }
    }
    let xp = sol.rows(0, n).into_owned();
    let mut yp = DVector::zeros(m);
    for (k, &i) in active.iter().enumerate() {
        yp[i] = sol[n + k];
    }
    // drop negative multipliers on inequality rows
    for i in 0..mi {
        if yp[i] < 0.0 {
            yp[i] = 0.0;
        }
    }
    let (prim, dual, comp) = kkt_residuals(problem, ws, &xp, &yp);
    if prim <= tol && dual <= tol && comp <= tol {
        let mut out = finish(problem, ws, xp, yp, 0);
        out.iterations = 0;
        Some(out)
    } else {
        None
    }
}

fn kkt_mul(h: &DMatrix<f64>, a: &DMatrix<f64>, v: &DVector<f64>, delta: f64) -> DVector<f64> {
    let n = h.ncols();
    let na = a.nrows();
    let x = v.rows(0, n).into_owned();
    let lam = v.rows(n, na).into_owned();
    let mut out = DVector::zeros(n + na);
    let mut top = h * &x;
    for i in 0..n {
        top[i] += 1e-9 * x[i];
    }
    if na > 0 {
        top += a.transpose() * &lam;
        let mut bot = a * &x;
        for i in 0..na {
            bot[i] -= delta * lam[i];
        }
        out.rows_mut(n, na).copy_from(&bot);
    }
    out.rows_mut(0, n).copy_from(&top);
    out
}

fn kkt_residuals(
    problem: &QpProblem,
    ws: &Workspace,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> (f64, f64, f64) {
    let m = ws.m;
    let mi = problem.ineq_rows.nrows();
    let cx = &ws.c * x;
    let mut prim = 0.0f64;
    let mut comp = 0.0f64;
    for i in 0..m {
        let v = (cx[i] - ws.u[i]).max(ws.l[i] - cx[i]).max(0.0);
        prim = prim.max(v);
        if i < mi {
            comp = comp.max((y[i] * (cx[i] - ws.u[i])).abs());
        }
    }
    let dual_vec = &problem.hessian * x + &problem.linear_term + ws.c.transpose() * y;
    (prim, dual_vec.abs().max(), comp)
}

fn finish(
    problem: &QpProblem,
    ws: &Workspace,
    x: DVector<f64>,
    y: DVector<f64>,
    iterations: usize,
) -> QpSolution {
    let mi = problem.ineq_rows.nrows();
    let objective = objective_value(problem, &x);
    QpSolution {
        dual_ineq: y.rows(0, mi).into_owned(),
        dual_eq: y.rows(mi, ws.m - mi).into_owned(),
        primal: x,
        objective,
        status: QpStatus::Optimal,
        infeasibility_residual: 0.0,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn active_single_constraint() {
        // min x^2 s.t. x >= 1
        let p = QpProblem::with_inequalities(
            dm(1, 1, &[2.0]),
            DVector::zeros(1),
            dm(1, 1, &[-1.0]),
            DVector::from_element(1, -1.0),
        );
        let s = solve_qp(&p, 1e-8, 20_000).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.primal[0] - 1.0).abs() < 1e-8);
        assert!((s.objective - 1.0).abs() < 1e-8);
    }

    #[test]
    fn unconstrained_minimum() {
        let p = QpProblem::unconstrained(DMatrix::identity(3, 3) * 2.0, DVector::zeros(3));
        let s = solve_qp(&p, 1e-8, 20_000).unwrap();
        assert!(s.primal.abs().max() < 1e-9);
    }

    #[test]
    fn diagonal_kkt_by_hand() {
        // min (x-2)^2 + (y-2)^2 s.t. x + y <= 2 -> (1, 1)
        let p = QpProblem::with_inequalities(
            DMatrix::identity(2, 2) * 2.0,
            DVector::from_row_slice(&[-4.0, -4.0]),
            dm(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 2.0),
        );
        let s = solve_qp(&p, 1e-8, 20_000).unwrap();
        assert!((s.primal[0] - 1.0).abs() < 1e-7);
        assert!((s.primal[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn equality_constrained() {
        // min ||x||^2 s.t. x1 + x2 = 1 -> (0.5, 0.5)
        let p = QpProblem {
            hessian: DMatrix::identity(2, 2) * 2.0,
            linear_term: DVector::zeros(2),
            ineq_rows: DMatrix::zeros(0, 2),
            ineq_rhs: DVector::zeros(0),
            eq_rows: dm(1, 2, &[1.0, 1.0]),
            eq_rhs: DVector::from_element(1, 1.0),
        };
        let s = solve_qp(&p, 1e-8, 20_000).unwrap();
        assert!((s.primal[0] - 0.5).abs() < 1e-7);
        assert!((s.primal[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn detects_infeasible() {
        // x <= 0 and x >= 1
        let p = QpProblem::with_inequalities(
            dm(1, 1, &[2.0]),
            DVector::zeros(1),
            dm(2, 1, &[1.0, -1.0]),
            DVector::from_row_slice(&[0.0, -1.0]),
        );
        let s = solve_qp(&p, 1e-8, 20_000).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        assert!(s.infeasibility_residual <= 1e-8);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let p = QpProblem::with_inequalities(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            dm(1, 2, &[1.0, 0.0]),
            DVector::zeros(2), // wrong length
        );
        assert!(matches!(
            solve_qp(&p, 1e-8, 100),
            Err(QpError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let p = QpProblem::unconstrained(dm(2, 2, &[1.0, 0.0, 0.0, -1.0]), DVector::zeros(2));
        assert!(matches!(solve_qp(&p, 1e-8, 100), Err(QpError::NotPsd)));
    }

    #[test]
    fn deterministic() {
        let p = QpProblem::with_inequalities(
            DMatrix::identity(3, 3) * 2.0,
            DVector::from_row_slice(&[-1.0, 2.0, -3.0]),
            dm(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]),
            DVector::from_row_slice(&[1.0, 0.5]),
        );
        let a = solve_qp(&p, 1e-8, 20_000).unwrap();
        let b = solve_qp(&p, 1e-8, 20_000).unwrap();
        assert_eq!(a.primal.as_slice(), b.primal.as_slice());
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }
}
