//! Artificial potential field planner: gradient descent on an attractive
//! quadratic well plus repulsive obstacle terms, with explicit
//! local-minimum failure reporting.

use nalgebra::DVector;

use crate::geometry::Scene;
use crate::model::LtiModel;

use super::{planning_margin, point_clear, PlannerConfig, PlannerError};

/// Gradient of the total potential at `p` (descent direction is its
/// negation). Attractive: conic far away, quadratic near the goal.
/// Repulsive: classic `k (1/d - 1/d0) / d^2` inside the influence distance,
/// measured on clearance beyond the planning margin.
fn gradient(
    scene: &Scene,
    p: &DVector<f64>,
    goal: &DVector<f64>,
    margin: f64,
    cfg: &PlannerConfig,
) -> DVector<f64> {
    let diff = p - goal;
    let dist = diff.norm();
    let switch = 0.5;
    let mut grad = if dist > switch {
        diff * (cfg.pf.attractive_gain * switch / dist)
    } else {
        diff * cfg.pf.attractive_gain
    };
    for obs in &scene.obstacles {
        let center = obs.center();
        let away = p - &center;
        let sep = away.norm();
        if sep < 1e-12 {
            continue;
        }
        // distance to the inflated obstacle surface
        let d = (sep - obs.radius_m - scene.agent_radius - margin).max(1e-4);
        let d0 = cfg.pf.influence_distance_m;
        if d < d0 {
            let coeff = cfg.pf.repulsive_gain * (1.0 / d - 1.0 / d0) / (d * d);
            grad -= (away / sep) * coeff;
        }
    }
    grad
}

/// Descends the potential from `start` until the goal ball (radius =
/// step size) is reached; returns the visited waypoints plus the goal.
pub fn plan_potential_field(
    scene: &Scene,
    model: &LtiModel,
    start: &DVector<f64>,
    goal: &DVector<f64>,
    cfg: &PlannerConfig,
) -> Result<Vec<DVector<f64>>, PlannerError> {
    let margin = planning_margin(scene);
    let step = cfg.pf.step_size_m;
    let mut p = start.clone();
    let mut waypoints = vec![p.clone()];
    let mut best_goal_dist = (start - goal).norm();
    let mut steps_since_progress = 0usize;
    // a window long enough to orbit a local minimum but far below max_steps
    let stall_window = 400;

    for k in 0..cfg.pf.max_steps {
        if (&p - goal).norm() <= step {
            waypoints.push(goal.clone());
            return Ok(waypoints);
        }
        let g = gradient(scene, &p, goal, margin, cfg);
        let gn = g.norm();
        if gn < 1e-10 {
            return Err(PlannerError::LocalMinimum(k));
        }
        // fixed-length step with halving when it would leave the free space
        let mut scale = step / gn;
        let mut moved = false;
        for _ in 0..8 {
            let cand = &p - &g * scale;
            if point_clear(scene, model, &cand, margin) {
                p = cand;
                moved = true;
                break;
            }
            scale *= 0.5;
        }
        if !moved {
            return Err(PlannerError::LocalMinimum(k));
        }
        waypoints.push(p.clone());
        let d = (&p - goal).norm();
        if d + 1e-6 < best_goal_dist {
            best_goal_dist = d;
            steps_since_progress = 0;
        } else {
            steps_since_progress += 1;
            if steps_since_progress > stall_window {
                return Err(PlannerError::LocalMinimum(k));
            }
        }
    }
    Err(PlannerError::LocalMinimum(cfg.pf.max_steps))
}
