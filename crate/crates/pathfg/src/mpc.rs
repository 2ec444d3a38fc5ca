//! Linear tracking OCP: constraint linearization along the previous
//! predicted trajectory, condensed QP assembly, the MPC feedback law, and
//! feasibility queries.
//!
//! The terminal condition `Delta(xi_N, r) <= 0` is the ellipsoid
//! `||xi_N - x_bar_r||_P^2 <= min_i Lambda_i(r)`. The QP enforces it with
//! the linear terminal rows plus supporting-hyperplane cuts generated
//! against a fractionally shrunk radius, then verifies exact membership on
//! the solution; a bisection backoff on the final input is the last-resort
//! repair and is reported on the solution so callers can require it never
//! fired.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{self, Halfspace, Scene};
use crate::model::{LtiModel, ModelError};
use crate::numkit::{self, solve_qp_warm, QpError, QpProblem, QpStatus};
use crate::terminal::{TerminalError, TerminalSet};

/// Relative shrink applied to the terminal ellipsoid radius when generating
/// cuts; exact membership is still checked against the full radius, so the
/// shrink only buys slack for finite cut termination.
const TERMINAL_SHRINK: f64 = 1e-6;
const MAX_CUTS: usize = 60;
/// Stage and input rows are tightened by this much inside the QP so that
/// solver-tolerance residuals can never surface as true constraint
/// violations in closed loop.
const ROW_TIGHTEN: f64 = 1e-7;
const QP_TOL: f64 = 1e-8;
const QP_MAX_ITER: usize = 200_000;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("qp: {0}")]
    Qp(#[from] QpError),
    #[error("terminal: {0}")]
    Terminal(#[from] TerminalError),
    #[error("geometry: {0}")]
    Geometry(#[from] geometry::GeometryError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    BadSpec(String),
    #[error("feedback requested from an infeasible solution")]
    InfeasibleSolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcpStatus {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    /// Predicted states, `N + 1` entries, `xi[0] = x0`.
    pub xi: Vec<DVector<f64>>,
    /// Predicted inputs, `N` entries.
    pub mu: Vec<DVector<f64>>,
    pub cost: f64,
    pub status: OcpStatus,
    pub solve_time: f64,
    pub cuts_used: usize,
    pub backoff_used: bool,
}

/// Per-stage constraint polytopes (box rows plus linearized obstacle rows),
/// `N + 1` stages.
#[derive(Debug, Clone)]
pub struct StagePolytopes {
    pub stages: Vec<Vec<Halfspace>>,
}

/// Immutable problem description plus the condensed-QP prediction matrices,
/// which depend only on the model and the horizon.
#[derive(Debug, Clone)]
pub struct OcpSpec {
    pub model: LtiModel,
    pub scene: Scene,
    pub terminal: TerminalSet,
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    a_pow: Vec<DMatrix<f64>>,
    su: DMatrix<f64>,
    h: DMatrix<f64>,
    su_t_qbar: DMatrix<f64>,
    rbar: DMatrix<f64>,
}

impl OcpSpec {
    pub fn new(
        model: LtiModel,
        scene: Scene,
        terminal: TerminalSet,
        horizon: usize,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self, MpcError> {
        if horizon < 1 {
            return Err(MpcError::BadSpec("horizon must be >= 1".into()));
        }
        let nx = model.state_dim();
        let nu = model.input_dim();
        if q.nrows() != nx || q.ncols() != nx || r.nrows() != nu || r.ncols() != nu {
            return Err(MpcError::BadSpec("cost matrix dimensions".into()));
        }
        for (m, name) in [(&q, "Q"), (&r, "R")] {
            if !numkit::is_symmetric_psd(m, 1e-9, 0.0)
                || numkit::min_symmetric_eigenvalue(m) <= 1e-12
            {
                return Err(MpcError::BadSpec(format!("{name} must be PD")));
            }
        }

        let n = horizon;
        let mut a_pow = Vec::with_capacity(n + 1);
        a_pow.push(DMatrix::identity(nx, nx));
        for i in 0..n {
            let next = &a_pow[i] * &model.a;
            a_pow.push(next);
        }
        // su block (i-1, j) = A^(i-1-j) B for stages i = 1..N
        let mut su = DMatrix::zeros(n * nx, n * nu);
        for i in 1..=n {
            for j in 0..i {
                su.view_mut(((i - 1) * nx, j * nu), (nx, nu))
                    .copy_from(&(&a_pow[i - 1 - j] * &model.b));
            }
        }
        let mut qbar = DMatrix::zeros(n * nx, n * nx);
        for i in 1..n {
            qbar.view_mut(((i - 1) * nx, (i - 1) * nx), (nx, nx)).copy_from(&q);
        }
        qbar.view_mut(((n - 1) * nx, (n - 1) * nx), (nx, nx))
            .copy_from(&terminal.p);
        let mut rbar = DMatrix::zeros(n * nu, n * nu);
        for i in 0..n {
            rbar.view_mut((i * nu, i * nu), (nu, nu)).copy_from(&r);
        }
        let su_t_qbar = su.transpose() * &qbar;
        let mut h = (&su_t_qbar * &su + &rbar) * 2.0;
        // symmetrize against rounding so the QP validator accepts it
        h = (&h + h.transpose()) * 0.5;
        Ok(OcpSpec {
            model,
            scene,
            terminal,
            horizon,
            q,
            r,
            a_pow,
            su,
            h,
            su_t_qbar,
            rbar,
        })
    }

    fn su_stage(&self, i: usize) -> DMatrix<f64> {
        let nx = self.model.state_dim();
        self.su
            .view(((i - 1) * nx, 0), (nx, self.su.ncols()))
            .into_owned()
    }
}

fn box_rows(scene: &Scene, nx: usize) -> Vec<Halfspace> {
    let mut rows = Vec::with_capacity(2 * nx);
    for i in 0..nx {
        let mut c = DVector::zeros(nx);
        c[i] = 1.0;
        rows.push(Halfspace { normal: c, offset: scene.x_max[i] });
        let mut c = DVector::zeros(nx);
        c[i] = -1.0;
        rows.push(Halfspace { normal: c, offset: -scene.x_min[i] });
    }
    rows
}

/// Builds the stage polytopes for one solve: stage `i` linearizes the
/// obstacle rows at the time-shifted previous prediction `xi[i+1]` (the last
/// stage reuses the final point); with no previous solution every stage
/// linearizes at `x0`.
pub fn linearize_constraints(
    spec: &OcpSpec,
    prev_solution: Option<&OcpSolution>,
    x0: &DVector<f64>,
) -> Result<StagePolytopes, MpcError> {
    let n = spec.horizon;
    if let Some(prev) = prev_solution {
        if prev.xi.len() != n + 1 {
            return Err(MpcError::BadSpec("previous solution horizon mismatch".into()));
        }
    }
    let nx = spec.model.state_dim();
    let base = box_rows(&spec.scene, nx);
    let mut stages = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let point = match prev_solution {
            Some(prev) => &prev.xi[(i + 1).min(n)],
            None => x0,
        };
        let mut rows = base.clone();
        for obs in &spec.scene.obstacles {
            let h =
                geometry::halfspace_approximation(obs, spec.scene.agent_radius, &spec.model.xi_map, point)?;
            rows.push(h);
        }
        stages.push(rows);
    }
    Ok(StagePolytopes { stages })
}

/// Linearizes the obstacle rows along the straight position segment from
/// `x0` to the reference equilibrium; used to bootstrap feasibility queries.
fn segment_polytopes(
    spec: &OcpSpec,
    x0: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<StagePolytopes, MpcError> {
    let n = spec.horizon;
    let nx = spec.model.state_dim();
    let p0 = spec.model.position_of(x0);
    let p1 = r.clone();
    let base = box_rows(&spec.scene, nx);
    let mut stages = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let frac = ((i + 1).min(n)) as f64 / n as f64;
        let point = &p0 + (&p1 - &p0) * frac;
        let mut rows = base.clone();
        for obs in &spec.scene.obstacles {
            rows.push(geometry::halfspace_at_position(
                obs,
                spec.scene.agent_radius,
                &spec.model.xi_map,
                &point,
            )?);
        }
        stages.push(rows);
    }
    Ok(StagePolytopes { stages })
}

fn rollout(spec: &OcpSpec, x0: &DVector<f64>, z: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let n = spec.horizon;
    let nu = spec.model.input_dim();
    let mut xi = Vec::with_capacity(n + 1);
    let mut mu = Vec::with_capacity(n);
    xi.push(x0.clone());
    for i in 0..n {
        let u = z.rows(i * nu, nu).into_owned();
        let next = spec.model.step(&xi[i], &u);
        xi.push(next);
        mu.push(u);
    }
    (xi, mu)
}

fn trajectory_cost(
    spec: &OcpSpec,
    xi: &[DVector<f64>],
    mu: &[DVector<f64>],
    x_bar: &DVector<f64>,
    u_bar: &DVector<f64>,
) -> f64 {
    let n = spec.horizon;
    let mut j = 0.0;
    for i in 0..n {
        let dx = &xi[i] - x_bar;
        let du = &mu[i] - u_bar;
        j += (dx.transpose() * &spec.q * &dx)[(0, 0)];
        j += (du.transpose() * &spec.r * &du)[(0, 0)];
    }
    let dn = &xi[n] - x_bar;
    j + (dn.transpose() * &spec.terminal.p * &dn)[(0, 0)]
}

fn infeasible_solution(spec: &OcpSpec, x0: &DVector<f64>, t0: Instant) -> OcpSolution {
    let z = DVector::zeros(spec.horizon * spec.model.input_dim());
    let (xi, mu) = rollout(spec, x0, &z);
    OcpSolution {
        xi,
        mu,
        cost: f64::INFINITY,
        status: OcpStatus::Infeasible,
        solve_time: t0.elapsed().as_secs_f64(),
        cuts_used: 0,
        backoff_used: false,
    }
}

/// Solves the condensed tracking QP at `(x0, r)` under the given stage
/// polytopes. Infeasibility is a value, not an error; solver hard failures
/// propagate.
pub fn solve_ocp(
    spec: &OcpSpec,
    x0: &DVector<f64>,
    r: &DVector<f64>,
    polytopes: &StagePolytopes,
    warm_start: Option<&OcpSolution>,
) -> Result<OcpSolution, MpcError> {
    let t0 = Instant::now();
    let n = spec.horizon;
    let nx = spec.model.state_dim();
    let nu = spec.model.input_dim();
    let nz = n * nu;
    if x0.len() != nx {
        return Err(MpcError::BadSpec("state dimension".into()));
    }
    if polytopes.stages.len() != n + 1 {
        return Err(MpcError::BadSpec("polytope stage count".into()));
    }
    let (x_bar, u_bar) = spec.model.equilibrium_for_reference(r)?;

    // stage 0 rows act on the fixed initial state
    for row in &polytopes.stages[0] {
        if row.slack(x0) < -1e-7 {
            return Ok(infeasible_solution(spec, x0, t0));
        }
    }

    let terminal_rows = spec.terminal.constraint_rows_for_reference(r)?;
    let lambda = spec.terminal.min_threshold(r)?;
    let lambda_cut = lambda * (1.0 - TERMINAL_SHRINK);
    let lambda_accept = lambda * (1.0 - 0.5 * TERMINAL_SHRINK);

    // linear term: 2 [Su' Qbar (Sx x0 - Xbar) - Rbar Ubar]
    let mut pred_err = DVector::zeros(n * nx);
    for i in 1..=n {
        let pred = &spec.a_pow[i] * x0 - &x_bar;
        pred_err.rows_mut((i - 1) * nx, nx).copy_from(&pred);
    }
    let mut ubar_stack = DVector::zeros(nz);
    for i in 0..n {
        ubar_stack.rows_mut(i * nu, nu).copy_from(&u_bar);
    }
    let lin = (&spec.su_t_qbar * &pred_err - &spec.rbar * &ubar_stack) * 2.0;

    // inequality rows in z-space
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for i in 0..n {
        for j in 0..nu {
            let mut c = DVector::zeros(nz);
            c[i * nu + j] = 1.0;
            rows.push(c);
            rhs.push(spec.scene.u_max[j] - ROW_TIGHTEN);
            let mut c = DVector::zeros(nz);
            c[i * nu + j] = -1.0;
            rows.push(c);
            rhs.push(-spec.scene.u_min[j] - ROW_TIGHTEN);
        }
    }
    for i in 1..n {
        let su_i = spec.su_stage(i);
        let ax = &spec.a_pow[i] * x0;
        for h in &polytopes.stages[i] {
            rows.push((h.normal.transpose() * &su_i).transpose());
            rhs.push(h.offset - ROW_TIGHTEN - h.normal.dot(&ax));
        }
    }
    let su_n = spec.su_stage(n);
    let axn = &spec.a_pow[n] * x0;
    for row in &terminal_rows {
        rows.push((row.c.transpose() * &su_n).transpose());
        rhs.push(row.d - row.c.dot(&axn));
    }

    let mut warm = warm_start.map(|w| {
        let mut z = DVector::zeros(nz);
        for (i, u) in w.mu.iter().enumerate().take(n) {
            z.rows_mut(i * nu, nu).copy_from(u);
        }
        z
    });

    let mut cuts_used = 0;
    loop {
        let g = DMatrix::from_rows(&rows.iter().map(|r| r.transpose()).collect::<Vec<_>>());
        let h_vec = DVector::from_vec(rhs.clone());
        let problem = QpProblem::with_inequalities(spec.h.clone(), lin.clone(), g, h_vec);
        let sol = solve_qp_warm(&problem, QP_TOL, QP_MAX_ITER, warm.as_ref())?;
        match sol.status {
            QpStatus::Optimal => {}
            _ => return Ok(infeasible_solution(spec, x0, t0)),
        }
        let z = sol.primal;
        let (xi, mu) = rollout(spec, x0, &z);
        let dn = &xi[n] - &x_bar;
        let v = (dn.transpose() * &spec.terminal.p * &dn)[(0, 0)];
        if v <= lambda_accept || cuts_used >= MAX_CUTS {
            if v <= lambda_accept {
                let cost = trajectory_cost(spec, &xi, &mu, &x_bar, &u_bar);
                return Ok(OcpSolution {
                    xi,
                    mu,
                    cost,
                    status: OcpStatus::Feasible,
                    solve_time: t0.elapsed().as_secs_f64(),
                    cuts_used,
                    backoff_used: false,
                });
            }
            // cut budget exhausted: try the bisection backoff on the final
            // input before declaring defeat
            return backoff_final_input(spec, x0, r, &x_bar, &u_bar, xi, mu, cuts_used, t0);
        }
        // supporting hyperplane of the shrunk ellipsoid at the scaled
        // boundary point
        let xi_b = &x_bar + &dn * (lambda_cut / v).sqrt();
        let grad = &spec.terminal.p * (&xi_b - &x_bar) * 2.0;
        rows.push((grad.transpose() * &su_n).transpose());
        rhs.push(grad.dot(&xi_b) - grad.dot(&axn));
        cuts_used += 1;
        warm = Some(z);
    }
}

/// Blends the final input toward the terminal control law until the exact
/// membership check passes; minimal blend found by bisection.
#[allow(clippy::too_many_arguments)]
fn backoff_final_input(
    spec: &OcpSpec,
    x0: &DVector<f64>,
    r: &DVector<f64>,
    x_bar: &DVector<f64>,
    u_bar: &DVector<f64>,
    xi: Vec<DVector<f64>>,
    mu: Vec<DVector<f64>>,
    cuts_used: usize,
    t0: Instant,
) -> Result<OcpSolution, MpcError> {
    let n = spec.horizon;
    let u_term = u_bar - &spec.terminal.k * (&xi[n - 1] - x_bar);
    let blend = |theta: f64| -> (DVector<f64>, DVector<f64>) {
        let u = &mu[n - 1] * (1.0 - theta) + &u_term * theta;
        let x_n = spec.model.step(&xi[n - 1], &u);
        (u, x_n)
    };
    let member = |x_n: &DVector<f64>| -> bool {
        matches!(spec.terminal.delta(x_n, r), Ok(d) if d <= 0.0)
    };
    let (u_full, x_full) = blend(1.0);
    if !member(&x_full) || spec.scene.input_margin(&u_full) < 0.0 {
        return Ok(infeasible_solution(spec, x0, t0));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let (u_mid, x_mid) = blend(mid);
        if member(&x_mid) && spec.scene.input_margin(&u_mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (u_fixed, x_fixed) = blend(hi);
    let mut xi = xi;
    let mut mu = mu;
    mu[n - 1] = u_fixed;
    xi[n] = x_fixed;
    let cost = trajectory_cost(spec, &xi, &mu, x_bar, u_bar);
    Ok(OcpSolution {
        xi,
        mu,
        cost,
        status: OcpStatus::Feasible,
        solve_time: t0.elapsed().as_secs_f64(),
        cuts_used,
        backoff_used: true,
    })
}

/// The MPC control law: first input of a feasible solution.
pub fn mpc_feedback(solution: &OcpSolution) -> Result<DVector<f64>, MpcError> {
    if solution.status != OcpStatus::Feasible {
        return Err(MpcError::InfeasibleSolution);
    }
    Ok(solution.mu[0].clone())
}

/// Bootstrap solve with no previous trajectory: linearize about the given
/// seed (straight segment to the reference), solve, re-linearize about the
/// obtained trajectory, solve once more.
pub fn solve_with_bootstrap(
    spec: &OcpSpec,
    x0: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<OcpSolution, MpcError> {
    let polys = segment_polytopes(spec, x0, r)?;
    let first = solve_ocp(spec, x0, r, &polys, None)?;
    if first.status != OcpStatus::Feasible {
        // fall back to linearizing every stage at x0
        let polys0 = linearize_constraints(spec, None, x0)?;
        let retry = solve_ocp(spec, x0, r, &polys0, None)?;
        if retry.status != OcpStatus::Feasible {
            return Ok(retry);
        }
        let polys1 = linearize_constraints(spec, Some(&retry), x0)?;
        return solve_ocp(spec, x0, r, &polys1, Some(&retry));
    }
    let polys1 = linearize_constraints(spec, Some(&first), x0)?;
    solve_ocp(spec, x0, r, &polys1, Some(&first))
}

/// Gamma membership: can the OCP steer `x0` into the terminal slice of `r`?
pub fn is_feasible(spec: &OcpSpec, x0: &DVector<f64>, r: &DVector<f64>) -> bool {
    matches!(
        solve_with_bootstrap(spec, x0, r),
        Ok(sol) if sol.status == OcpStatus::Feasible
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_quadrotor_model, QuadrotorParams};
    use crate::scenes::{paper_cost_matrices, paper_scene};
    use crate::terminal::synthesize_terminal_ingredients;

    fn quad_spec(n: usize) -> OcpSpec {
        let model = build_quadrotor_model(&QuadrotorParams::default()).unwrap();
        let scene = paper_scene();
        let (q, r) = paper_cost_matrices();
        let ts = synthesize_terminal_ingredients(&model, &scene, &q, &r).unwrap();
        OcpSpec::new(model, scene, ts, n, q, r).unwrap()
    }

    fn double_integrator_spec() -> OcpSpec {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.005, 0.1]);
        let gx = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let gu = DMatrix::zeros(1, 1);
        let xi = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let ts = 0.1;
        let model = LtiModel::new(a, b, ts, gx, gu, xi, DVector::zeros(1)).unwrap();
        let scene = Scene {
            x_min: DVector::from_row_slice(&[-50.0, -50.0]),
            x_max: DVector::from_row_slice(&[50.0, 50.0]),
            u_min: DVector::from_row_slice(&[-40.0]),
            u_max: DVector::from_row_slice(&[40.0]),
            obstacles: vec![],
            agent_radius: 0.0,
            epsilon: 0.01,
        };
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        let term = synthesize_terminal_ingredients(&model, &scene, &q, &r).unwrap();
        OcpSpec::new(model, scene, term, 2, q, r).unwrap()
    }

    #[test]
    fn equilibrium_start_zero_cost() {
        let spec = quad_spec(5);
        let r = DVector::from_row_slice(&[2.5, 2.5, 1.0]);
        let x0 = &spec.model.gx * &r;
        let polys = linearize_constraints(&spec, None, &x0).unwrap();
        let sol = solve_ocp(&spec, &x0, &r, &polys, None).unwrap();
        assert_eq!(sol.status, OcpStatus::Feasible);
        assert!(sol.cost < 1e-8, "cost {}", sol.cost);
        for u in &sol.mu {
            assert!(u.abs().max() < 1e-4);
        }
        let fb = mpc_feedback(&sol).unwrap();
        assert!(fb.abs().max() < 1e-4);
    }

    /// Brute-force active-set enumeration for the 2-step double-integrator
    /// problem; all constraints are verified inactive, so the unconstrained
    /// least-squares solution is the oracle.
    #[test]
    fn double_integrator_matches_unconstrained_oracle() {
        let spec = double_integrator_spec();
        let r = DVector::zeros(1);
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        let polys = linearize_constraints(&spec, None, &x0).unwrap();
        let sol = solve_ocp(&spec, &x0, &r, &polys, None).unwrap();
        assert_eq!(sol.status, OcpStatus::Feasible);
        assert_eq!(sol.cuts_used, 0);

        // independent dense assembly of the unconstrained 2-step problem
        let (a, b, q, rr, p) = (
            &spec.model.a,
            &spec.model.b,
            &spec.q,
            &spec.r,
            &spec.terminal.p,
        );
        // z = (u0, u1); xi1 = A x0 + B u0; xi2 = A^2 x0 + A B u0 + B u1
        let s1u0 = b.clone();
        let s2u0 = a * b;
        let s2u1 = b.clone();
        let mut h = DMatrix::zeros(2, 2);
        h[(0, 0)] = (s1u0.transpose() * q * &s1u0)[(0, 0)]
            + (s2u0.transpose() * p * &s2u0)[(0, 0)]
            + rr[(0, 0)];
        h[(1, 1)] = (s2u1.transpose() * p * &s2u1)[(0, 0)] + rr[(0, 0)];
        h[(0, 1)] = (s2u0.transpose() * p * &s2u1)[(0, 0)];
        h[(1, 0)] = h[(0, 1)];
        let x1f = a * &x0;
        let x2f = a * a * &x0;
        let g = DVector::from_row_slice(&[
            (s1u0.transpose() * q * &x1f)[(0, 0)] + (s2u0.transpose() * p * &x2f)[(0, 0)],
            (s2u1.transpose() * p * &x2f)[(0, 0)],
        ]);
        let z_star = h.clone().cholesky().unwrap().solve(&-g);
        let j_star = {
            let u0 = DVector::from_row_slice(&[z_star[0]]);
            let u1 = DVector::from_row_slice(&[z_star[1]]);
            let x1 = a * &x0 + b * &u0;
            let x2 = a * &x1 + b * &u1;
            (x0.transpose() * q * &x0)[(0, 0)]
                + (x1.transpose() * q * &x1)[(0, 0)]
                + (u0.transpose() * rr * &u0)[(0, 0)]
                + (u1.transpose() * rr * &u1)[(0, 0)]
                + (x2.transpose() * p * &x2)[(0, 0)]
        };
        assert!((sol.cost - j_star).abs() < 1e-5, "{} vs {}", sol.cost, j_star);
        assert!((sol.mu[0][0] - z_star[0]).abs() < 1e-5);
        // confirm the oracle's assumptions: inputs well inside the box and
        // terminal ellipsoid inactive
        assert!(z_star.abs().max() < 39.0);
        let lam = spec.terminal.min_threshold(&r).unwrap();
        let x2 = &sol.xi[2];
        assert!((x2.transpose() * p * x2)[(0, 0)] < 0.9 * lam);
    }

    #[test]
    fn far_state_infeasible() {
        let spec = quad_spec(5);
        let r = DVector::from_row_slice(&[2.5, 2.5, 1.0]);
        let mut x0 = DVector::zeros(9);
        x0[0] = -8.0;
        let polys = linearize_constraints(&spec, None, &x0).unwrap();
        let sol = solve_ocp(&spec, &x0, &r, &polys, None).unwrap();
        assert_eq!(sol.status, OcpStatus::Infeasible);
        assert!(mpc_feedback(&sol).is_err());
        assert!(!is_feasible(&spec, &x0, &r));
    }

    #[test]
    fn gamma_contains_equilibria() {
        let spec = quad_spec(5);
        for r in [
            DVector::from_row_slice(&[0.1, 0.1, 0.3]),
            DVector::from_row_slice(&[2.5, 2.5, 1.0]),
        ] {
            let x0 = &spec.model.gx * &r;
            assert!(is_feasible(&spec, &x0, &r));
        }
    }

    #[test]
    fn empty_scene_polytopes_are_boxes() {
        let mut spec = quad_spec(3);
        spec.scene.obstacles.clear();
        let x0 = DVector::zeros(9);
        let polys = linearize_constraints(&spec, None, &x0).unwrap();
        assert_eq!(polys.stages.len(), 4);
        for stage in &polys.stages {
            assert_eq!(stage.len(), 18);
        }
    }

    #[test]
    fn single_obstacle_linearization_example() {
        // unit sphere at origin, all linearization points at (2,0,0):
        // obstacle row reduces to p_x >= 1
        let mut spec = quad_spec(2);
        spec.scene.obstacles = vec![crate::geometry::SphereObstacle::new(&[0.0, 0.0, 0.0], 1.0)];
        spec.scene.agent_radius = 0.0;
        let mut x0 = DVector::zeros(9);
        x0[0] = 2.0;
        let polys = linearize_constraints(&spec, None, &x0).unwrap();
        for stage in &polys.stages {
            let row = stage.last().unwrap();
            assert!((row.normal[0] + 1.0).abs() < 1e-12);
            assert!((row.offset + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_property() {
        let spec = quad_spec(4);
        let r = DVector::from_row_slice(&[0.18, 0.15, 0.35]);
        let x0 = &spec.model.gx * &DVector::from_row_slice(&[0.1, 0.1, 0.3]);
        let sol = solve_with_bootstrap(&spec, &x0, &r).unwrap();
        assert_eq!(sol.status, OcpStatus::Feasible);
        let polys = linearize_constraints(&spec, Some(&sol), &x0).unwrap();
        for i in 0..spec.horizon {
            let expected = geometry::halfspace_approximation(
                &spec.scene.obstacles[0],
                spec.scene.agent_radius,
                &spec.model.xi_map,
                &sol.xi[i + 1],
            )
            .unwrap();
            let got = &polys.stages[i][18];
            assert!((&got.normal - &expected.normal).abs().max() < 1e-12);
            assert!((got.offset - expected.offset).abs() < 1e-12);
        }
    }

    #[test]
    fn dynamics_residual_and_constraint_slack() {
        let spec = quad_spec(5);
        let r = DVector::from_row_slice(&[0.18, 0.15, 0.35]);
        let x0 = &spec.model.gx * &DVector::from_row_slice(&[0.1, 0.1, 0.3]);
        let sol = solve_with_bootstrap(&spec, &x0, &r).unwrap();
        assert_eq!(sol.status, OcpStatus::Feasible);
        assert!(!sol.backoff_used);
        for i in 0..spec.horizon {
            let pred = spec.model.step(&sol.xi[i], &sol.mu[i]);
            assert!((&pred - &sol.xi[i + 1]).abs().max() < 1e-7);
            assert!(spec.scene.input_margin(&sol.mu[i]) >= -1e-7);
        }
        // true obstacle clearance at every stage
        for x in &sol.xi {
            let pos = spec.model.position_of(x);
            assert!(spec.scene.min_obstacle_clearance(&pos) >= -1e-7);
        }
        // final state in the terminal slice, exactly
        assert!(spec.terminal.delta(&sol.xi[5], &r).unwrap() <= 0.0);
    }

    #[test]
    fn recursive_feasibility_and_cost_decrease_smoke() {
        let spec = quad_spec(5);
        let r = DVector::from_row_slice(&[0.18, 0.15, 0.35]);
        let x0 = &spec.model.gx * &DVector::from_row_slice(&[0.1, 0.1, 0.3]);
        let mut x = x0.clone();
        let mut prev: Option<OcpSolution> = None;
        let mut last_cost = f64::INFINITY;
        for k in 0..40 {
            let sol = match &prev {
                None => solve_with_bootstrap(&spec, &x, &r).unwrap(),
                Some(p) => {
                    let polys = linearize_constraints(&spec, Some(p), &x).unwrap();
                    solve_ocp(&spec, &x, &r, &polys, Some(p)).unwrap()
                }
            };
            assert_eq!(sol.status, OcpStatus::Feasible, "infeasible at step {k}");
            if k > 0 {
                let dx = &x - &spec.model.gx * &r;
                let _stage = (dx.transpose() * &spec.q * &dx)[(0, 0)];
                assert!(
                    sol.cost <= last_cost + 1e-6,
                    "cost rose at {k}: {} -> {}",
                    last_cost,
                    sol.cost
                );
            }
            last_cost = sol.cost;
            let u = mpc_feedback(&sol).unwrap();
            x = spec.model.step(&x, &u);
            prev = Some(sol);
        }
        let err = (spec.model.position_of(&x) - &r).norm();
        assert!(err < 1e-2, "did not converge, err {err}");
    }
}
