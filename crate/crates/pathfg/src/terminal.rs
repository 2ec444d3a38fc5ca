//! Terminal-set synthesis and membership.
//!
//! The terminal set is the sublevel set of `Delta(x, r) = max_i alpha_i
//! [V(x, r) - Lambda_i(r)]` where `V(x, r) = ||x - x_bar_r||_P^2` and each
//! `Lambda_i` is the Lyapunov threshold of a linearized constraint row at
//! the reference equilibrium.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::geometry::{self, Scene};
use crate::model::LtiModel;
use crate::numkit::{self, solve_dare, DareError};

#[derive(Debug, Error)]
pub enum TerminalError {
    #[error("dare: {0}")]
    Dare(#[from] DareError),
    #[error("Q must be symmetric positive definite")]
    QNotPd,
    #[error("R must be symmetric positive definite")]
    RNotPd,
    #[error("Lyapunov matrix inequality violated (min eigenvalue {0:.3e})")]
    LmiViolated(f64),
    #[error("reference is not strictly steady-state admissible")]
    ReferenceNotAdmissible,
    #[error("constraint row has zero normal")]
    ZeroNormal,
    #[error("geometry: {0}")]
    Geometry(#[from] geometry::GeometryError),
}

/// Terminal cost, gain, and the machinery to evaluate membership for any
/// strictly admissible reference.
#[derive(Debug, Clone)]
pub struct TerminalSet {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub alphas_box: f64,
    pub alphas_input: f64,
    pub alphas_obstacle: f64,
    pub scene: Scene,
    pub model: LtiModel,
    p_chol: Cholesky<f64, Dyn>,
    // cached pieces of the threshold denominators c' P^-1 c, so membership
    // queries avoid refactorizing per row
    p_inv_diag: DVector<f64>,
    /// `Xi P^-1 Xi'`; obstacle-row denominators are quadratic forms in the
    /// unit projection direction against this matrix.
    pos_pinv_pos: DMatrix<f64>,
    /// `k_i' P^-1 k_i` per input row.
    input_denoms: DVector<f64>,
}

/// One linearized terminal constraint row `c' x <= d`.
#[derive(Debug, Clone)]
pub struct TerminalRow {
    pub c: DVector<f64>,
    pub d: f64,
    pub alpha: f64,
}

/// Computes `(P, K)` from the Riccati equation for the given stage costs and
/// verifies the terminal Lyapunov matrix inequality.
pub fn synthesize_terminal_ingredients(
    model: &LtiModel,
    scene: &Scene,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<TerminalSet, TerminalError> {
    if !numkit::is_symmetric_psd(q, 1e-9, 0.0) || numkit::min_symmetric_eigenvalue(q) <= 1e-12 {
        return Err(TerminalError::QNotPd);
    }
    if !numkit::is_symmetric_psd(r, 1e-9, 0.0) || numkit::min_symmetric_eigenvalue(r) <= 1e-12 {
        return Err(TerminalError::RNotPd);
    }
    let (p, k) = solve_dare(&model.a, &model.b, q, r, 1e-13)?;
    let acl = &model.a - &model.b * &k;
    let lmi = &p - acl.transpose() * &p * &acl - q - k.transpose() * r * &k;
    let min_eig = numkit::min_symmetric_eigenvalue(&lmi);
    if min_eig < -1e-6 {
        return Err(TerminalError::LmiViolated(min_eig));
    }
    let p_chol = p
        .clone()
        .cholesky()
        .ok_or(TerminalError::LmiViolated(f64::NEG_INFINITY))?;
    let p_inv = p_chol.inverse();
    let p_inv_diag = p_inv.diagonal();
    let pos_pinv_pos = &model.xi_map * &p_inv * model.xi_map.transpose();
    let input_denoms = DVector::from_fn(model.input_dim(), |i, _| {
        let k_row: DVector<f64> = k.row(i).transpose();
        k_row.dot(&(&p_inv * &k_row))
    });
    Ok(TerminalSet {
        p,
        k,
        alphas_box: 1.0,
        alphas_input: 1.0,
        alphas_obstacle: 1.0,
        scene: scene.clone(),
        model: model.clone(),
        p_chol,
        p_inv_diag,
        pos_pinv_pos,
        input_denoms,
    })
}

/// Lyapunov threshold of a single linear constraint:
/// `[d - c' x_bar]^2 / (c' P^-1 c)`.
pub fn lyapunov_threshold(
    p_chol: &Cholesky<f64, Dyn>,
    c: &DVector<f64>,
    d: f64,
    x_bar: &DVector<f64>,
) -> Result<f64, TerminalError> {
    if c.norm() < 1e-14 {
        return Err(TerminalError::ZeroNormal);
    }
    let margin = d - c.dot(x_bar);
    let pinv_c = p_chol.solve(c);
    let denom = c.dot(&pinv_c);
    if margin <= 0.0 {
        return Ok(0.0);
    }
    Ok(margin * margin / denom)
}

impl TerminalSet {
    /// The linearized constraint stack at a reference: obstacle half-spaces
    /// at the equilibrium position, state box rows, and input rows mapped
    /// through the terminal control law.
    pub fn constraint_rows_for_reference(
        &self,
        r: &DVector<f64>,
    ) -> Result<Vec<TerminalRow>, TerminalError> {
        if !geometry::is_reference_strictly_admissible(&self.scene, &self.model, r) {
            return Err(TerminalError::ReferenceNotAdmissible);
        }
        let (x_bar, u_bar) = self
            .model
            .equilibrium_for_reference(r)
            .map_err(|_| TerminalError::ReferenceNotAdmissible)?;
        let nx = self.model.state_dim();
        let nu = self.model.input_dim();
        let mut rows = Vec::with_capacity(self.scene.obstacles.len() + 2 * nx + 2 * nu);

        for obs in &self.scene.obstacles {
            let h = geometry::halfspace_approximation(
                obs,
                self.scene.agent_radius,
                &self.model.xi_map,
                &x_bar,
            )?;
            rows.push(TerminalRow {
                c: h.normal,
                d: h.offset,
                alpha: self.alphas_obstacle,
            });
        }
        for i in 0..nx {
            let mut c = DVector::zeros(nx);
            c[i] = 1.0;
            rows.push(TerminalRow {
                c,
                d: self.scene.x_max[i],
                alpha: self.alphas_box,
            });
            let mut c = DVector::zeros(nx);
            c[i] = -1.0;
            rows.push(TerminalRow {
                c,
                d: -self.scene.x_min[i],
                alpha: self.alphas_box,
            });
        }
        // terminal law u = u_bar - K (x - x_bar):
        //   u <= u_max  <=>  -K_row x <= u_max_row - u_bar_row - K_row x_bar
        //   u >= u_min  <=>   K_row x <= -u_min_row + u_bar_row + K_row x_bar
        for i in 0..nu {
            let k_row: DVector<f64> = self.k.row(i).transpose();
            let k_xbar = k_row.dot(&x_bar);
            rows.push(TerminalRow {
                c: -&k_row,
                d: self.scene.u_max[i] - u_bar[i] - k_xbar,
                alpha: self.alphas_input,
            });
            rows.push(TerminalRow {
                c: k_row,
                d: -self.scene.u_min[i] + u_bar[i] + k_xbar,
                alpha: self.alphas_input,
            });
        }
        Ok(rows)
    }

    /// Smallest `Lambda_i(r)` over the whole constraint stack.
    pub fn min_threshold(&self, r: &DVector<f64>) -> Result<f64, TerminalError> {
        let (l_obs, l_box, l_in) = self.group_thresholds(r)?;
        Ok(l_obs.min(l_box).min(l_in))
    }

    /// Minimum `Lambda_i` per row group (obstacle, state box, input),
    /// computed from the cached `P^-1` quadratic forms without building the
    /// row stack. Agrees with `lyapunov_threshold` over
    /// `constraint_rows_for_reference`.
    fn group_thresholds(&self, r: &DVector<f64>) -> Result<(f64, f64, f64), TerminalError> {
        if !geometry::is_reference_strictly_admissible(&self.scene, &self.model, r) {
            return Err(TerminalError::ReferenceNotAdmissible);
        }
        let x_bar = &self.model.gx * r;
        let u_bar = &self.model.gu * r;
        let pos = &self.model.xi_map * &x_bar;

        let mut l_obs = f64::INFINITY;
        for obs in &self.scene.obstacles {
            let dir = obs.center() - &pos;
            let dist = dir.norm();
            if dist < 1e-12 {
                return Err(TerminalError::Geometry(
                    crate::geometry::GeometryError::DegenerateProjection,
                ));
            }
            let unit = dir / dist;
            // margin d - c' x_bar reduces to the clearance at the
            // equilibrium position
            let margin = dist - self.scene.agent_radius - obs.radius_m;
            let denom = unit.dot(&(&self.pos_pinv_pos * &unit));
            l_obs = l_obs.min(threshold_from(margin, denom));
        }

        let mut l_box = f64::INFINITY;
        for i in 0..self.model.state_dim() {
            let denom = self.p_inv_diag[i];
            l_box = l_box.min(threshold_from(self.scene.x_max[i] - x_bar[i], denom));
            l_box = l_box.min(threshold_from(x_bar[i] - self.scene.x_min[i], denom));
        }

        let mut l_in = f64::INFINITY;
        for i in 0..self.model.input_dim() {
            // both input rows have margin independent of x_bar
            let denom = self.input_denoms[i];
            l_in = l_in.min(threshold_from(self.scene.u_max[i] - u_bar[i], denom));
            l_in = l_in.min(threshold_from(u_bar[i] - self.scene.u_min[i], denom));
        }
        Ok((l_obs, l_box, l_in))
    }

    /// Terminal Lyapunov value `||x - x_bar_r||_P^2`.
    pub fn lyapunov_value(&self, x: &DVector<f64>, r: &DVector<f64>) -> f64 {
        let dx = x - &self.model.gx * r;
        (dx.transpose() * &self.p * &dx)[(0, 0)]
    }

    /// `Delta(x, r) = max_i alpha_i [V(x, r) - Lambda_i(r)]`; membership in
    /// the terminal set is `Delta <= 0`.
    pub fn delta(&self, x: &DVector<f64>, r: &DVector<f64>) -> Result<f64, TerminalError> {
        let (l_obs, l_box, l_in) = self.group_thresholds(r)?;
        let v = self.lyapunov_value(x, r);
        let mut worst = self.alphas_box * (v - l_box);
        worst = worst.max(self.alphas_input * (v - l_in));
        if l_obs.is_finite() {
            worst = worst.max(self.alphas_obstacle * (v - l_obs));
        }
        Ok(worst)
    }

    /// Terminal control law and one step of the terminal dynamics.
    pub fn terminal_step(&self, x: &DVector<f64>, r: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (x_bar, u_bar) = (&self.model.gx * r, &self.model.gu * r);
        let u = &u_bar - &self.k * (x - &x_bar);
        let x_next = self.model.step(x, &u);
        (x_next, u)
    }

    pub fn p_solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.p_chol.solve(rhs)
    }
}

impl TerminalSet {
    /// Membership test `Delta(x, r) <= 0` for a reference already known to
    /// be strictly admissible (for example a point on a validated path).
    /// Skips the admissibility guard and stops at the first violated
    /// threshold; agrees with the sign of `delta` on such references.
    pub fn contains_for_valid_reference(&self, x: &DVector<f64>, r: &DVector<f64>) -> bool {
        let x_bar = &self.model.gx * r;
        let dx = x - &x_bar;
        let v = (dx.transpose() * &self.p * &dx)[(0, 0)];

        for i in 0..self.model.state_dim() {
            let denom = self.p_inv_diag[i];
            if v > threshold_from(self.scene.x_max[i] - x_bar[i], denom)
                || v > threshold_from(x_bar[i] - self.scene.x_min[i], denom)
            {
                return false;
            }
        }
        let u_bar = &self.model.gu * r;
        for i in 0..self.model.input_dim() {
            let denom = self.input_denoms[i];
            if v > threshold_from(self.scene.u_max[i] - u_bar[i], denom)
                || v > threshold_from(u_bar[i] - self.scene.u_min[i], denom)
            {
                return false;
            }
        }
        let pos = &self.model.xi_map * &x_bar;
        for obs in &self.scene.obstacles {
            let dir = obs.center() - &pos;
            let dist = dir.norm();
            if dist < 1e-12 {
                return false;
            }
            let margin = dist - self.scene.agent_radius - obs.radius_m;
            let denom = (dir.transpose() * &self.pos_pinv_pos * &dir)[(0, 0)] / (dist * dist);
            if v > threshold_from(margin, denom) {
                return false;
            }
        }
        true
    }
}

fn threshold_from(margin: f64, denom: f64) -> f64 {
    if margin <= 0.0 {
        0.0
    } else {
        margin * margin / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_quadrotor_model, QuadrotorParams};
    use crate::scenes::paper_cost_matrices;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad_setup() -> (LtiModel, Scene, TerminalSet) {
        let model = build_quadrotor_model(&QuadrotorParams::default()).unwrap();
        let scene = crate::scenes::paper_scene();
        let (q, r) = paper_cost_matrices();
        let ts = synthesize_terminal_ingredients(&model, &scene, &q, &r).unwrap();
        (model, scene, ts)
    }

    #[test]
    fn quadrotor_synthesis_passes_lmi() {
        let (model, _, ts) = quad_setup();
        let acl = &model.a - &model.b * &ts.k;
        assert!(numkit::spectral_radius(&acl) < 1.0);
        assert!(numkit::min_symmetric_eigenvalue(&ts.p) > 0.0);
    }

    #[test]
    fn scalar_golden_ratio_synthesis() {
        use nalgebra::DMatrix;
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let (p, k) = solve_dare(&a, &b, &DMatrix::identity(1, 1), &DMatrix::identity(1, 1), 1e-13).unwrap();
        let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
        assert!((p[(0, 0)] - phi).abs() < 1e-10);
        // Eq-24-style identity holds with equality for the DARE solution
        let acl = 1.0 - k[(0, 0)];
        let residual = p[(0, 0)] - acl * p[(0, 0)] * acl - 1.0 - k[(0, 0)] * k[(0, 0)];
        assert!(residual.abs() < 1e-9);
    }

    #[test]
    fn non_pd_q_rejected() {
        let model = build_quadrotor_model(&QuadrotorParams::default()).unwrap();
        let scene = crate::scenes::paper_scene();
        let mut q = DMatrix::identity(9, 9);
        q[(0, 0)] = 0.0;
        let r = DMatrix::identity(4, 4);
        assert!(matches!(
            synthesize_terminal_ingredients(&model, &scene, &q, &r),
            Err(TerminalError::QNotPd)
        ));
    }

    #[test]
    fn row_counts() {
        let (model, scene, ts) = quad_setup();
        let r = DVector::from_row_slice(&[2.5, 2.5, 1.0]);
        let rows = ts.constraint_rows_for_reference(&r).unwrap();
        assert_eq!(rows.len(), scene.obstacles.len() + 18 + 8);
        let _ = model;

        // empty-obstacle scene: 2 nx + 2 nu rows
        let mut empty = scene.clone();
        empty.obstacles.clear();
        let (q, rc) = paper_cost_matrices();
        let ts2 = synthesize_terminal_ingredients(&ts.model, &empty, &q, &rc).unwrap();
        assert_eq!(ts2.constraint_rows_for_reference(&r).unwrap().len(), 26);
    }

    #[test]
    fn goal_rows_strictly_positive_margins() {
        let (_, _, ts) = quad_setup();
        let r = DVector::from_row_slice(&[2.5, 2.5, 1.0]);
        let x_bar = &ts.model.gx * &r;
        for row in ts.constraint_rows_for_reference(&r).unwrap() {
            assert!(row.d - row.c.dot(&x_bar) > 0.0);
        }
    }

    #[test]
    fn lyapunov_threshold_examples() {
        let id = DMatrix::identity(3, 3).cholesky().unwrap();
        let c = DVector::from_row_slice(&[1.0, 0.0, 0.0]);
        let x0 = DVector::zeros(3);
        assert!((lyapunov_threshold(&id, &c, 1.0, &x0).unwrap() - 1.0).abs() < 1e-14);
        let p4 = (DMatrix::identity(3, 3) * 4.0).cholesky().unwrap();
        assert!((lyapunov_threshold(&p4, &c, 1.0, &x0).unwrap() - 4.0).abs() < 1e-14);
        // zero margin
        assert!(lyapunov_threshold(&id, &c, 0.0, &x0).unwrap().abs() < 1e-14);
        // zero normal errors
        assert!(lyapunov_threshold(&id, &DVector::zeros(3), 1.0, &x0).is_err());
    }

    #[test]
    fn fast_thresholds_match_row_stack() {
        let (_, _, ts) = quad_setup();
        for r in [
            DVector::from_row_slice(&[2.5, 2.5, 1.0]),
            DVector::from_row_slice(&[0.1, 0.1, 0.3]),
            DVector::from_row_slice(&[0.5, 2.5, 1.2]),
        ] {
            let x_bar = &ts.model.gx * &r;
            let mut min_lambda = f64::INFINITY;
            for row in ts.constraint_rows_for_reference(&r).unwrap() {
                let lam = lyapunov_threshold(&ts.p_chol, &row.c, row.d, &x_bar).unwrap();
                min_lambda = min_lambda.min(lam);
            }
            let fast = ts.min_threshold(&r).unwrap();
            assert!(
                (fast - min_lambda).abs() <= 1e-9 * min_lambda.max(1.0),
                "{fast} vs {min_lambda}"
            );
        }
    }

    #[test]
    fn fast_membership_agrees_with_delta_sign() {
        let (_, _, ts) = quad_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = DVector::from_row_slice(&[0.5, 2.5, 1.2]);
        let x_bar = &ts.model.gx * &r;
        for _ in 0..500 {
            let x = &x_bar
                + DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0f64))
                    * rng.gen_range(0.0..0.6f64);
            let slow = ts.delta(&x, &r).unwrap() <= 0.0;
            let fast = ts.contains_for_valid_reference(&x, &r);
            assert_eq!(slow, fast);
        }
    }

    #[test]
    fn delta_at_equilibrium_negative() {
        let (_, _, ts) = quad_setup();
        let r = DVector::from_row_slice(&[2.5, 2.5, 1.0]);
        let x_bar = &ts.model.gx * &r;
        let d = ts.delta(&x_bar, &r).unwrap();
        assert!(d < 0.0);
        assert!((d + ts.min_threshold(&r).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn delta_far_outside_positive() {
        let (_, _, ts) = quad_setup();
        let r = DVector::from_row_slice(&[2.5, 2.5, 1.0]);
        let mut x = &ts.model.gx * &r;
        x[3] = 5.0; // large velocity
        assert!(ts.delta(&x, &r).unwrap() > 0.0);
    }

    #[test]
    fn membership_implies_rows_hold() {
        let (_, _, ts) = quad_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = DVector::from_row_slice(&[2.5, 2.5, 1.0]);
        let rows = ts.constraint_rows_for_reference(&r).unwrap();
        let x_bar = &ts.model.gx * &r;
        for _ in 0..200 {
            let x = sample_in_terminal_set(&ts, &r, &mut rng);
            assert!(ts.delta(&x, &r).unwrap() <= 1e-12);
            for row in &rows {
                assert!(row.c.dot(&x) <= row.d + 1e-9);
            }
            let _ = &x_bar;
        }
    }

    #[test]
    fn terminal_step_at_equilibrium() {
        let (_, _, ts) = quad_setup();
        let r = DVector::from_row_slice(&[1.0, 1.0, 0.5]);
        let x_bar = &ts.model.gx * &r;
        let (x_next, u) = ts.terminal_step(&x_bar, &r);
        assert!(u.abs().max() < 1e-12);
        assert!((x_next - x_bar).abs().max() < 1e-12);
    }

    #[test]
    fn terminal_step_scalar_hand_arithmetic() {
        // golden-ratio system, x_bar = 0, x = 1: u = -0.618..., x_next = 0.382...
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let (_, k) = solve_dare(&a, &b, &DMatrix::identity(1, 1), &DMatrix::identity(1, 1), 1e-13).unwrap();
        let u = -k[(0, 0)] * 1.0;
        let x_next = 1.0 + u;
        assert!((u + 0.6180339887).abs() < 1e-8);
        assert!((x_next - 0.3819660113).abs() < 1e-8);
    }

    /// Draws a state with Delta(x, r) <= 0 by scaling a random direction
    /// into the terminal ellipsoid.
    pub fn sample_in_terminal_set(
        ts: &TerminalSet,
        r: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> DVector<f64> {
        let nx = ts.model.state_dim();
        let x_bar = &ts.model.gx * r;
        let min_lambda = ts.min_threshold(r).unwrap();
        let dir = DVector::from_fn(nx, |_, _| rng.gen_range(-1.0..1.0f64));
        let v_dir = (dir.transpose() * &ts.p * &dir)[(0, 0)];
        if v_dir < 1e-15 {
            return x_bar;
        }
        let scale = (rng.gen_range(0.0..1.0f64) * min_lambda / v_dir).sqrt();
        &x_bar + dir * scale
    }

    #[test]
    fn invariance_and_decrease_sample() {
        let (_, scene, ts) = quad_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let r = DVector::from_row_slice(&[0.5, 2.5, 1.2]);
        assert!(geometry::is_reference_strictly_admissible(&scene, &ts.model, &r));
        let (q, rc) = paper_cost_matrices();
        for _ in 0..200 {
            let x = sample_in_terminal_set(&ts, &r, &mut rng);
            let d0 = ts.delta(&x, &r).unwrap();
            assert!(d0 <= 1e-12);
            let (x_next, u) = ts.terminal_step(&x, &r);
            let d1 = ts.delta(&x_next, &r).unwrap();
            assert!(d1 <= d0 + 1e-9);
            // state and input admissible
            let (ok, _) = geometry::is_state_admissible(&scene, &ts.model, &x);
            assert!(ok);
            assert!(scene.input_margin(&u) >= -1e-9);
            // Lyapunov decrease with the precise stage-cost bound
            let dx = &x - &ts.model.gx * &r;
            let decrease_bound =
                (dx.transpose() * (&q + ts.k.transpose() * &rc * &ts.k) * &dx)[(0, 0)];
            let v0 = ts.lyapunov_value(&x, &r);
            let v1 = ts.lyapunov_value(&x_next, &r);
            assert!(v1 - v0 <= -decrease_bound + 1e-9);
        }
    }
}
