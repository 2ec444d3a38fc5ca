//! Closed-loop simulation: governor + MPC tracking of a planned path, and
//! the ungoverned fixed-reference baseline.

use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{self, Scene};
use crate::governor::{self, GovernorState};
use crate::model::{build_quadrotor_model, LtiModel, ModelError, QuadrotorParams};
use crate::mpc::{self, MpcError, OcpSpec, OcpStatus};
use crate::planner::{self, PiecewisePath};
use crate::sim::config::SimConfig;
use crate::terminal::{synthesize_terminal_ingredients, TerminalError};

/// Position-error threshold for declaring convergence, meters.
pub const CONVERGENCE_TOL_M: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("terminal synthesis: {0}")]
    Terminal(#[from] TerminalError),
    #[error("mpc: {0}")]
    Mpc(#[from] MpcError),
    #[error("governor: {0}")]
    Governor(#[from] governor::GovernorError),
    #[error("planned path failed validation")]
    PathInvalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    BudgetExhausted,
    Infeasible,
    NoPath,
}

/// One logged control step (the final row carries zero input/cost/times).
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: usize,
    pub t_s: f64,
    pub state: DVector<f64>,
    pub input: DVector<f64>,
    pub s: f64,
    pub reference: DVector<f64>,
    pub error_m: f64,
    pub cost: f64,
    pub solve_time_s: f64,
    pub governor_time_s: f64,
    pub clearance_m: f64,
    pub feasible: bool,
    pub governor_evals: usize,
}

#[derive(Debug, Clone)]
pub struct SimLog {
    pub records: Vec<StepRecord>,
    pub verdict: Verdict,
    pub violation_count: usize,
    pub backoff_count: usize,
    pub infeasible_solve_count: usize,
    pub convergence_time_s: Option<f64>,
    pub path: Option<PiecewisePath>,
}

impl SimLog {
    pub fn mean_solve_time_s(&self) -> f64 {
        mean(self.active_records().map(|r| r.solve_time_s))
    }

    pub fn max_solve_time_s(&self) -> f64 {
        self.active_records()
            .map(|r| r.solve_time_s)
            .fold(0.0, f64::max)
    }

    pub fn mean_governor_time_s(&self) -> f64 {
        mean(self.active_records().map(|r| r.governor_time_s))
    }

    pub fn max_governor_evals(&self) -> usize {
        self.records.iter().map(|r| r.governor_evals).max().unwrap_or(0)
    }

    /// Records of steps where the controller actually ran (all but the
    /// trailing state-only row).
    fn active_records(&self) -> impl Iterator<Item = &StepRecord> {
        let n = self.records.len().saturating_sub(1);
        self.records.iter().take(n)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in it {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn build_problem(cfg: &SimConfig) -> Result<(LtiModel, Scene, OcpSpec), SimError> {
    let params = QuadrotorParams {
        mass_kg: cfg.model.mass_kg,
        gravity_mps2: cfg.model.gravity_mps2,
        ts_s: cfg.model.ts_s,
    };
    let model = build_quadrotor_model(&params)?;
    let scene = cfg.to_scene();
    let mut q = nalgebra::DMatrix::zeros(9, 9);
    for i in 0..3 {
        q[(i, i)] = cfg.cost.q_position;
        q[(3 + i, 3 + i)] = cfg.cost.q_velocity;
        q[(6 + i, 6 + i)] = cfg.cost.q_attitude;
    }
    let r = nalgebra::DMatrix::identity(4, 4) * cfg.cost.r_scale;
    let terminal = synthesize_terminal_ingredients(&model, &scene, &q, &r)?;
    let spec = OcpSpec::new(model.clone(), scene.clone(), terminal, cfg.horizon, q, r)?;
    Ok((model, scene, spec))
}

fn violation_free(scene: &Scene, model: &LtiModel, x: &DVector<f64>, u: &DVector<f64>) -> bool {
    let (state_ok, _) = geometry::is_state_admissible(scene, model, x);
    state_ok && scene.input_margin(u) >= 0.0
}

/// Clamp the applied input to the exact box; the QP is tightened by more
/// than its own tolerance, so this moves the input by at most ~1e-8.
fn clamp_input(scene: &Scene, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(u.len(), |i, _| {
        u[i].clamp(scene.u_min[i], scene.u_max[i])
    })
}

fn record_step(
    log: &mut SimLog,
    scene: &Scene,
    model: &LtiModel,
    k: usize,
    ts: f64,
    x: &DVector<f64>,
    u: DVector<f64>,
    s: f64,
    reference: &DVector<f64>,
    cost: f64,
    solve_time_s: f64,
    governor_time_s: f64,
    feasible: bool,
    governor_evals: usize,
) {
    let x_bar = &model.gx * reference;
    let pos = model.position_of(x);
    if feasible && !violation_free(scene, model, x, &u) {
        log.violation_count += 1;
    }
    log.records.push(StepRecord {
        k,
        t_s: k as f64 * ts,
        state: x.clone(),
        input: u,
        s,
        reference: reference.clone(),
        error_m: (x - x_bar).norm(),
        cost,
        solve_time_s,
        governor_time_s,
        clearance_m: scene.min_obstacle_clearance(&pos),
        feasible,
        governor_evals,
    });
}

/// Plan, validate, and run the governed closed loop.
pub fn run_closed_loop(cfg: &SimConfig) -> Result<SimLog, SimError> {
    let (model, scene, spec) = build_problem(cfg)?;
    let x0 = cfg.start_state_vec();
    let goal = cfg.goal_vec();
    let mut log = SimLog {
        records: vec![],
        verdict: Verdict::BudgetExhausted,
        violation_count: 0,
        backoff_count: 0,
        infeasible_solve_count: 0,
        convergence_time_s: None,
        path: None,
    };

    let start_pos = model.position_of(&x0);
    let path = match planner::plan(&scene, &model, &start_pos, &goal, &cfg.planner_config()) {
        Ok(p) => p,
        Err(_) => {
            log.verdict = Verdict::NoPath;
            return Ok(log);
        }
    };
    let report = planner::validate_path(&path, &scene, &model, &spec, &x0);
    if !report.pass() {
        log.verdict = Verdict::NoPath;
        return Ok(log);
    }
    log.path = Some(path.clone());

    let goal_eq = &model.gx * &goal;
    let ts = cfg.model.ts_s;
    let mut x = x0;
    let mut gov = GovernorState::new();
    let mut prev: Option<mpc::OcpSolution> = None;

    for k in 0..cfg.max_steps {
        // governor update from the previous optimal final predicted state
        let (gov_time, evals) = match &prev {
            Some(sol) => {
                let t0 = Instant::now();
                let (s_new, evals) = governor::governor_update(
                    &spec.terminal,
                    &path,
                    &gov,
                    &sol.xi[cfg.horizon],
                    cfg.governor.grid_step,
                    cfg.governor.bisect_tol,
                )?;
                gov.s = s_new;
                (t0.elapsed().as_secs_f64(), evals)
            }
            None => (0.0, 0),
        };

        // convergence check
        if gov.s >= 1.0 && (model.position_of(&x) - &goal).norm() <= CONVERGENCE_TOL_M {
            log.verdict = Verdict::Converged;
            log.convergence_time_s = Some(k as f64 * ts);
            let r = path.eval(1.0).expect("s = 1 in range");
            record_step(
                &mut log, &scene, &model, k, ts, &x,
                DVector::zeros(model.input_dim()),
                gov.s, &r, 0.0, 0.0, gov_time, true, evals,
            );
            return Ok(log);
        }

        let r = path.eval(gov.s).expect("governor keeps s in range");
        let sol = match &prev {
            None => mpc::solve_with_bootstrap(&spec, &x, &r)?,
            Some(p) => {
                let polys = mpc::linearize_constraints(&spec, Some(p), &x)?;
                mpc::solve_ocp(&spec, &x, &r, &polys, Some(p))?
            }
        };
        if sol.backoff_used {
            log.backoff_count += 1;
        }
        if sol.status != OcpStatus::Feasible {
            log.infeasible_solve_count += 1;
            record_step(
                &mut log, &scene, &model, k, ts, &x,
                DVector::zeros(model.input_dim()),
                gov.s, &r, f64::INFINITY, sol.solve_time, gov_time, false, evals,
            );
            log.verdict = Verdict::Infeasible;
            return Ok(log);
        }
        let u = clamp_input(&scene, &mpc::mpc_feedback(&sol)?);
        record_step(
            &mut log, &scene, &model, k, ts, &x, u.clone(), gov.s, &r,
            sol.cost, sol.solve_time, gov_time, true, evals,
        );
        x = model.step(&x, &u);
        gov.last_xi_n = Some(sol.xi[cfg.horizon].clone());
        prev = Some(sol);
    }

    // budget exhausted: close the log with the final state
    let r = path.eval(gov.s).expect("s in range");
    record_step(
        &mut log, &scene, &model, cfg.max_steps, ts, &x,
        DVector::zeros(model.input_dim()),
        gov.s, &r, 0.0, 0.0, 0.0, true, 0,
    );
    let _ = goal_eq;
    Ok(log)
}

/// Ungoverned baseline: MPC alone tracking the goal reference directly,
/// no planner and no governor; `s` is logged as 1.
pub fn run_ungoverned(cfg: &SimConfig) -> Result<SimLog, SimError> {
    let (model, scene, spec) = build_problem(cfg)?;
    let goal = cfg.goal_vec();
    let ts = cfg.model.ts_s;
    let mut x = cfg.start_state_vec();
    let mut prev: Option<mpc::OcpSolution> = None;
    let mut log = SimLog {
        records: vec![],
        verdict: Verdict::BudgetExhausted,
        violation_count: 0,
        backoff_count: 0,
        infeasible_solve_count: 0,
        convergence_time_s: None,
        path: None,
    };

    for k in 0..cfg.max_steps {
        if (model.position_of(&x) - &goal).norm() <= CONVERGENCE_TOL_M {
            log.verdict = Verdict::Converged;
            log.convergence_time_s = Some(k as f64 * ts);
            record_step(
                &mut log, &scene, &model, k, ts, &x,
                DVector::zeros(model.input_dim()),
                1.0, &goal, 0.0, 0.0, 0.0, true, 0,
            );
            return Ok(log);
        }
        let sol = match &prev {
            None => mpc::solve_with_bootstrap(&spec, &x, &goal)?,
            Some(p) => {
                let polys = mpc::linearize_constraints(&spec, Some(p), &x)?;
                mpc::solve_ocp(&spec, &x, &goal, &polys, Some(p))?
            }
        };
        if sol.backoff_used {
            log.backoff_count += 1;
        }
        if sol.status != OcpStatus::Feasible {
            log.infeasible_solve_count += 1;
            record_step(
                &mut log, &scene, &model, k, ts, &x,
                DVector::zeros(model.input_dim()),
                1.0, &goal, f64::INFINITY, sol.solve_time, 0.0, false, 0,
            );
            log.verdict = Verdict::Infeasible;
            return Ok(log);
        }
        let u = clamp_input(&scene, &mpc::mpc_feedback(&sol)?);
        record_step(
            &mut log, &scene, &model, k, ts, &x, u.clone(), 1.0, &goal,
            sol.cost, sol.solve_time, 0.0, true, 0,
        );
        x = model.step(&x, &u);
        prev = Some(sol);
    }
    let final_x = x.clone();
    record_step(
        &mut log, &scene, &model, cfg.max_steps, ts, &final_x,
        DVector::zeros(model.input_dim()),
        1.0, &goal, 0.0, 0.0, 0.0, true, 0,
    );
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::PlannerKind;
    use crate::sim::config::paper_config;

    #[test]
    fn paper_run_converges() {
        let cfg = paper_config();
        let log = run_closed_loop(&cfg).unwrap();
        assert_eq!(log.verdict, Verdict::Converged, "{:?}", log.verdict);
        assert_eq!(log.violation_count, 0);
        assert_eq!(log.infeasible_solve_count, 0);
        assert_eq!(log.backoff_count, 0);
        // s nondecreasing, ends at exactly 1
        let mut last = 0.0;
        for r in &log.records {
            assert!(r.s >= last);
            last = r.s;
        }
        assert_eq!(last, 1.0);
        assert!(log.records.iter().all(|r| r.feasible));
        assert!(log.records.iter().all(|r| r.clearance_m >= 0.0));
    }

    #[test]
    fn potential_field_run_converges() {
        let mut cfg = paper_config();
        cfg.planner.kind = PlannerKind::PotentialField;
        let log = run_closed_loop(&cfg).unwrap();
        assert_eq!(log.verdict, Verdict::Converged);
        assert_eq!(log.violation_count, 0);
    }

    #[test]
    fn start_at_goal_converges_immediately() {
        let mut cfg = paper_config();
        cfg.start_state = vec![2.5, 2.5, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let log = run_closed_loop(&cfg).unwrap();
        assert_eq!(log.verdict, Verdict::Converged);
        assert!(log.records.last().unwrap().k <= 1);
        assert_eq!(log.records.last().unwrap().s, 1.0);
    }

    #[test]
    fn ungoverned_short_horizon_infeasible_at_k0() {
        let cfg = paper_config();
        let log = run_ungoverned(&cfg).unwrap();
        assert_eq!(log.verdict, Verdict::Infeasible);
        assert_eq!(log.records[0].k, 0);
    }

    #[test]
    fn empty_scene_straight_run() {
        let mut cfg = paper_config();
        cfg.scene.obstacles.clear();
        cfg.goal_reference_m = vec![1.0, 0.1, 0.3];
        let log = run_closed_loop(&cfg).unwrap();
        assert_eq!(log.verdict, Verdict::Converged);
    }
}
