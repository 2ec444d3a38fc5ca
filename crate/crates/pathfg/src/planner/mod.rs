//! Path planners producing a continuous arc-length-parameterized path of
//! strictly admissible references, plus evaluation and validation helpers.

mod potential_field;
mod rrt_star;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Scene};
use crate::model::LtiModel;
use crate::mpc::{self, OcpSpec};

pub use potential_field::plan_potential_field;
pub use rrt_star::plan_rrt_star;

/// Extra clearance (beyond the scene margin `epsilon`) that planners keep to
/// obstacles, so terminal-set slices along the path do not collapse against
/// the obstacle rows.
pub const PLANNER_EXTRA_MARGIN: f64 = 0.05;

/// Maximum waypoint spacing after resampling.
const RESAMPLE_SPACING: f64 = 0.2;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("no path found within the planner budget")]
    NoPathFound,
    #[error("potential field stalled in a local minimum after {0} steps")]
    LocalMinimum(usize),
    #[error("goal reference is not strictly admissible")]
    GoalNotAdmissible,
    #[error("start position is outside the state box")]
    StartOutOfBounds,
    #[error("no strictly admissible anchor found near the start position")]
    NoAnchor,
    #[error("path parameter {0} outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("path needs at least one waypoint")]
    EmptyPath,
}

/// Piecewise-linear path in reference (position) space, parameterized by
/// normalized arc length.
#[derive(Debug, Clone)]
pub struct PiecewisePath {
    pub waypoints: Vec<DVector<f64>>,
    /// Normalized cumulative arc lengths, one per waypoint; first 0, last 1
    /// (all zero then 1 for a single-point/zero-length path).
    pub cumulative_lengths: Vec<f64>,
}

impl PiecewisePath {
    pub fn from_waypoints(waypoints: Vec<DVector<f64>>) -> Result<Self, PlannerError> {
        if waypoints.is_empty() {
            return Err(PlannerError::EmptyPath);
        }
        let mut cum = Vec::with_capacity(waypoints.len());
        cum.push(0.0);
        for w in waypoints.windows(2) {
            let last = *cum.last().unwrap();
            cum.push(last + (&w[1] - &w[0]).norm());
        }
        let total = *cum.last().unwrap();
        if total > 1e-12 {
            for c in cum.iter_mut() {
                *c /= total;
            }
        }
        *cum.last_mut().unwrap() = 1.0;
        Ok(PiecewisePath {
            waypoints,
            cumulative_lengths: cum,
        })
    }

    pub fn total_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (&w[1] - &w[0]).norm())
            .sum()
    }

    pub fn eval(&self, s: f64) -> Result<DVector<f64>, PlannerError> {
        path_eval(self, s)
    }
}

/// Arc-length-linear interpolation; `p(0)` and `p(1)` are the endpoint
/// waypoints exactly.
pub fn path_eval(path: &PiecewisePath, s: f64) -> Result<DVector<f64>, PlannerError> {
    if !(0.0..=1.0).contains(&s) || s.is_nan() {
        return Err(PlannerError::ParameterOutOfRange(s));
    }
    let n = path.waypoints.len();
    if s == 0.0 || n == 1 {
        return Ok(path.waypoints[0].clone());
    }
    if s == 1.0 {
        return Ok(path.waypoints[n - 1].clone());
    }
    let cum = &path.cumulative_lengths;
    let idx = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
        Ok(i) => return Ok(path.waypoints[i].clone()),
        Err(i) => i, // first index with cum > s; segment is idx-1 .. idx
    };
    let (lo, hi) = (cum[idx - 1], cum[idx]);
    if hi - lo < 1e-15 {
        return Ok(path.waypoints[idx].clone());
    }
    let t = (s - lo) / (hi - lo);
    Ok(&path.waypoints[idx - 1] + (&path.waypoints[idx] - &path.waypoints[idx - 1]) * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    RrtStar,
    PotentialField,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RrtParams {
    pub max_iters: usize,
    pub step_size_m: f64,
    pub goal_bias: f64,
    pub rewire_radius_m: f64,
}

impl Default for RrtParams {
    fn default() -> Self {
        RrtParams {
            max_iters: 4000,
            step_size_m: 0.25,
            goal_bias: 0.1,
            rewire_radius_m: 0.6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfParams {
    pub attractive_gain: f64,
    pub repulsive_gain: f64,
    pub influence_distance_m: f64,
    pub step_size_m: f64,
    pub max_steps: usize,
}

impl Default for PfParams {
    fn default() -> Self {
        PfParams {
            attractive_gain: 1.0,
            repulsive_gain: 0.05,
            influence_distance_m: 0.25,
            step_size_m: 0.02,
            max_steps: 20_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    pub kind: PlannerKind,
    pub seed: u64,
    #[serde(default)]
    pub rrt: RrtParams,
    #[serde(default)]
    pub pf: PfParams,
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.rrt.max_iters < 1 {
            return Err("rrt.max_iters must be >= 1".into());
        }
        for (v, name) in [
            (self.rrt.step_size_m, "rrt.step_size_m"),
            (self.rrt.rewire_radius_m, "rrt.rewire_radius_m"),
            (self.pf.attractive_gain, "pf.attractive_gain"),
            (self.pf.repulsive_gain, "pf.repulsive_gain"),
            (self.pf.influence_distance_m, "pf.influence_distance_m"),
            (self.pf.step_size_m, "pf.step_size_m"),
        ] {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.rrt.goal_bias) {
            return Err("rrt.goal_bias must be in [0, 1)".into());
        }
        if self.pf.max_steps < 1 {
            return Err("pf.max_steps must be >= 1".into());
        }
        Ok(())
    }
}

/// Margin the planners keep to obstacles and box faces.
pub(crate) fn planning_margin(scene: &Scene) -> f64 {
    scene.epsilon + PLANNER_EXTRA_MARGIN
}

/// Position admissibility with the planner's enlarged margin.
pub(crate) fn point_clear(scene: &Scene, model: &LtiModel, p: &DVector<f64>, margin: f64) -> bool {
    match geometry::reference_margin(scene, model, p) {
        Some(m) => m >= margin,
        None => false,
    }
}

pub(crate) fn segment_clear(
    scene: &Scene,
    model: &LtiModel,
    a: &DVector<f64>,
    b: &DVector<f64>,
    margin: f64,
) -> bool {
    // endpoints carry the box/input checks; the box is convex so interior
    // points inherit them, and the obstacle check on the interior is exact
    point_clear(scene, model, a, margin)
        && point_clear(scene, model, b, margin)
        && geometry::segment_min_clearance(scene, a, b) >= margin
}

/// Plans a path from `start_pos` to `goal_ref` with the configured planner,
/// then shortcut-smooths and resamples it. Deterministic for a fixed seed.
pub fn plan(
    scene: &Scene,
    model: &LtiModel,
    start_pos: &DVector<f64>,
    goal_ref: &DVector<f64>,
    cfg: &PlannerConfig,
) -> Result<PiecewisePath, PlannerError> {
    let margin = planning_margin(scene);
    if !geometry::is_reference_strictly_admissible(scene, model, goal_ref)
        || !point_clear(scene, model, goal_ref, margin)
    {
        return Err(PlannerError::GoalNotAdmissible);
    }
    for i in 0..start_pos.len() {
        if start_pos[i] < scene.x_min[i] || start_pos[i] > scene.x_max[i] {
            return Err(PlannerError::StartOutOfBounds);
        }
    }
    let anchor = find_anchor(scene, model, start_pos, margin)?;
    let raw = match cfg.kind {
        PlannerKind::RrtStar => rrt_star::plan_rrt_star(scene, model, &anchor, goal_ref, cfg)?,
        PlannerKind::PotentialField => {
            potential_field::plan_potential_field(scene, model, &anchor, goal_ref, cfg)?
        }
    };
    let smoothed = shortcut(scene, model, raw, margin);
    let resampled = resample(smoothed);
    PiecewisePath::from_waypoints(resampled)
}

/// `p(0)` anchor: the start position itself when strictly admissible with
/// planning margin, otherwise the closest admissible point found on a
/// deterministic spherical search pattern.
fn find_anchor(
    scene: &Scene,
    model: &LtiModel,
    start_pos: &DVector<f64>,
    margin: f64,
) -> Result<DVector<f64>, PlannerError> {
    if point_clear(scene, model, start_pos, margin) {
        return Ok(start_pos.clone());
    }
    let dirs: Vec<DVector<f64>> = {
        let mut d = Vec::new();
        for ix in -1i32..=1 {
            for iy in -1i32..=1 {
                for iz in -1i32..=1 {
                    if ix == 0 && iy == 0 && iz == 0 {
                        continue;
                    }
                    let v = DVector::from_row_slice(&[ix as f64, iy as f64, iz as f64]);
                    d.push(v.normalize());
                }
            }
        }
        d
    };
    let mut radius = 0.01;
    while radius <= 2.0 {
        for dir in &dirs {
            let cand = start_pos + dir * radius;
            if point_clear(scene, model, &cand, margin) {
                return Ok(cand);
            }
        }
        radius += 0.01;
    }
    Err(PlannerError::NoAnchor)
}

/// Greedy shortcut smoothing: from each waypoint, jump to the furthest
/// later waypoint reachable by a clear straight segment.
fn shortcut(
    scene: &Scene,
    model: &LtiModel,
    waypoints: Vec<DVector<f64>>,
    margin: f64,
) -> Vec<DVector<f64>> {
    if waypoints.len() <= 2 {
        return waypoints;
    }
    let mut out = vec![waypoints[0].clone()];
    let mut i = 0;
    while i + 1 < waypoints.len() {
        let mut j = waypoints.len() - 1;
        while j > i + 1 {
            if segment_clear(scene, model, &waypoints[i], &waypoints[j], margin) {
                break;
            }
            j -= 1;
        }
        out.push(waypoints[j].clone());
        i = j;
    }
    out
}

/// Splits segments so no two consecutive waypoints are more than
/// `RESAMPLE_SPACING` apart.
fn resample(waypoints: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    if waypoints.len() < 2 {
        return waypoints;
    }
    let mut out = vec![waypoints[0].clone()];
    for w in waypoints.windows(2) {
        let len = (&w[1] - &w[0]).norm();
        let pieces = (len / RESAMPLE_SPACING).ceil().max(1.0) as usize;
        for p in 1..=pieces {
            let t = p as f64 / pieces as f64;
            out.push(&w[0] + (&w[1] - &w[0]) * t);
        }
    }
    out
}

/// Validation report for a planned path against Assumption-3-style
/// requirements.
#[derive(Debug, Clone)]
pub struct PathReport {
    pub waypoint_admissible: Vec<bool>,
    pub dense_admissible: bool,
    pub min_dense_margin: f64,
    pub gamma_ok: bool,
}

impl PathReport {
    pub fn pass(&self) -> bool {
        self.waypoint_admissible.iter().all(|&b| b)
            && self.dense_admissible
            && self.gamma_ok
    }
}

/// Checks per-waypoint strict admissibility, dense-sample admissibility at
/// `ds = 1e-3`, and OCP feasibility of `(x0, p(0))`.
pub fn validate_path(
    path: &PiecewisePath,
    scene: &Scene,
    model: &LtiModel,
    spec: &OcpSpec,
    x0: &DVector<f64>,
) -> PathReport {
    let waypoint_admissible: Vec<bool> = path
        .waypoints
        .iter()
        .map(|w| geometry::is_reference_strictly_admissible(scene, model, w))
        .collect();
    let mut min_margin = f64::INFINITY;
    let mut dense_ok = true;
    let steps = 1000;
    for i in 0..=steps {
        let s = i as f64 / steps as f64;
        match path.eval(s) {
            Ok(p) => match geometry::reference_margin(scene, model, &p) {
                Some(m) => {
                    min_margin = min_margin.min(m);
                    if m < scene.epsilon - 1e-9 {
                        dense_ok = false;
                    }
                }
                None => {
                    dense_ok = false;
                    min_margin = f64::NEG_INFINITY;
                }
            },
            Err(_) => dense_ok = false,
        }
    }
    let gamma_ok = match path.eval(0.0) {
        Ok(p0) => mpc::is_feasible(spec, x0, &p0),
        Err(_) => false,
    };
    PathReport {
        waypoint_admissible,
        dense_admissible: dense_ok,
        min_dense_margin: min_margin,
        gamma_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_quadrotor_model, QuadrotorParams};
    use crate::scenes::{paper_goal_position, paper_scene, paper_start_position};

    fn quad() -> (Scene, LtiModel) {
        (
            paper_scene(),
            build_quadrotor_model(&QuadrotorParams::default()).unwrap(),
        )
    }

    fn cfg(kind: PlannerKind, seed: u64) -> PlannerConfig {
        PlannerConfig {
            kind,
            seed,
            rrt: RrtParams::default(),
            pf: PfParams::default(),
        }
    }

    #[test]
    fn eval_midpoint_and_endpoints() {
        let path = PiecewisePath::from_waypoints(vec![
            DVector::from_row_slice(&[0.0, 0.0, 0.0]),
            DVector::from_row_slice(&[1.0, 0.0, 0.0]),
        ])
        .unwrap();
        let mid = path.eval(0.5).unwrap();
        assert!((mid[0] - 0.5).abs() < 1e-14);
        assert_eq!(path.eval(0.0).unwrap(), path.waypoints[0]);
        assert_eq!(path.eval(1.0).unwrap(), path.waypoints[1]);
        assert!(path.eval(1.5).is_err());
        assert!(path.eval(-0.1).is_err());
    }

    #[test]
    fn eval_arc_length_normalization() {
        // segment lengths 1 and 3: s = 0.25 is the end of the first segment
        let path = PiecewisePath::from_waypoints(vec![
            DVector::from_row_slice(&[0.0, 0.0, 0.0]),
            DVector::from_row_slice(&[1.0, 0.0, 0.0]),
            DVector::from_row_slice(&[4.0, 0.0, 0.0]),
        ])
        .unwrap();
        let p = path.eval(0.25).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_straight_path() {
        let (mut scene, model) = quad();
        scene.obstacles.clear();
        let start = DVector::from_row_slice(&[0.0, 0.0, 0.3]);
        let goal = DVector::from_row_slice(&[1.0, 0.0, 0.3]);
        for kind in [PlannerKind::RrtStar, PlannerKind::PotentialField] {
            let path = plan(&scene, &model, &start, &goal, &cfg(kind, 1)).unwrap();
            assert!((path.eval(0.0).unwrap() - &start).norm() < 1e-9);
            assert!((path.eval(1.0).unwrap() - &goal).norm() < 1e-9);
            // straight after smoothing: total length equals endpoint distance
            assert!((path.total_length() - 1.0).abs() < 1e-6, "{:?}", kind);
        }
    }

    #[test]
    fn paper_scene_both_planners() {
        let (scene, model) = quad();
        let start = paper_start_position();
        let goal = paper_goal_position();
        let margin = planning_margin(&scene);
        for kind in [PlannerKind::RrtStar, PlannerKind::PotentialField] {
            let path = plan(&scene, &model, &start, &goal, &cfg(kind, 7)).unwrap();
            assert!((path.eval(1.0).unwrap() - &goal).norm() < 1e-9);
            for w in path.waypoints.windows(2) {
                assert!(segment_clear(&scene, &model, &w[0], &w[1], margin - 1e-9));
                assert!((&w[1] - &w[0]).norm() <= RESAMPLE_SPACING + 1e-9);
            }
        }
    }

    #[test]
    fn goal_inside_obstacle_rejected() {
        let (scene, model) = quad();
        let start = paper_start_position();
        let goal = DVector::from_row_slice(&[0.8, 0.7, 0.5]);
        assert!(matches!(
            plan(&scene, &model, &start, &goal, &cfg(PlannerKind::RrtStar, 1)),
            Err(PlannerError::GoalNotAdmissible)
        ));
    }

    #[test]
    fn determinism_same_seed() {
        let (scene, model) = quad();
        let start = paper_start_position();
        let goal = paper_goal_position();
        let a = plan(&scene, &model, &start, &goal, &cfg(PlannerKind::RrtStar, 42)).unwrap();
        let b = plan(&scene, &model, &start, &goal, &cfg(PlannerKind::RrtStar, 42)).unwrap();
        assert_eq!(a.waypoints.len(), b.waypoints.len());
        for (x, y) in a.waypoints.iter().zip(&b.waypoints) {
            assert_eq!(x.as_slice(), y.as_slice());
        }
    }

    #[test]
    fn rrt_doubling_iters_never_longer() {
        let (scene, model) = quad();
        let start = paper_start_position();
        let goal = paper_goal_position();
        for seed in [1u64, 2, 3, 4, 5] {
            let mut c1 = cfg(PlannerKind::RrtStar, seed);
            c1.rrt.max_iters = 2000;
            let mut c2 = c1.clone();
            c2.rrt.max_iters = 4000;
            let raw1 = rrt_star::plan_rrt_star(&scene, &model, &start, &goal, &c1).unwrap();
            let raw2 = rrt_star::plan_rrt_star(&scene, &model, &start, &goal, &c2).unwrap();
            let len = |w: &Vec<DVector<f64>>| -> f64 {
                w.windows(2).map(|p| (&p[1] - &p[0]).norm()).sum()
            };
            assert!(len(&raw2) <= len(&raw1) + 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn dense_admissibility_margin() {
        let (scene, model) = quad();
        let start = paper_start_position();
        let goal = paper_goal_position();
        let path = plan(&scene, &model, &start, &goal, &cfg(PlannerKind::PotentialField, 3)).unwrap();
        for i in 0..=1000 {
            let s = i as f64 / 1000.0;
            let p = path.eval(s).unwrap();
            let m = geometry::reference_margin(&scene, &model, &p).unwrap();
            assert!(m >= scene.epsilon - 1e-9, "s = {s}: margin {m}");
        }
    }
}
