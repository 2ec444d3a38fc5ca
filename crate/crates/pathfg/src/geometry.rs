//! Constraint sets: state/input boxes, inflated sphere obstacles, projection
//! onto obstacles, half-space over-approximations, and strict steady-state
//! admissibility tests.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::LtiModel;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate projection: point coincides with obstacle center")]
    DegenerateProjection,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// Sphere obstacle, stored already inflated by its own safety margin. The
/// agent radius is added separately at query time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereObstacle {
    pub center_m: Vec<f64>,
    pub radius_m: f64,
}

impl SphereObstacle {
    pub fn new(center: &[f64], radius: f64) -> Self {
        SphereObstacle {
            center_m: center.to_vec(),
            radius_m: radius,
        }
    }

    pub fn center(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.center_m)
    }
}

/// Box state/input bounds plus sphere obstacles.
#[derive(Debug, Clone)]
pub struct Scene {
    pub x_min: DVector<f64>,
    pub x_max: DVector<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub obstacles: Vec<SphereObstacle>,
    pub agent_radius: f64,
    pub epsilon: f64,
}

impl Scene {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.x_min.len() != self.x_max.len() {
            return Err(GeometryError::DimensionMismatch("state box".into()));
        }
        if self.u_min.len() != self.u_max.len() {
            return Err(GeometryError::DimensionMismatch("input box".into()));
        }
        for i in 0..self.x_min.len() {
            if self.x_min[i] >= self.x_max[i] {
                return Err(GeometryError::InvalidScene(format!(
                    "x_min[{i}] >= x_max[{i}]"
                )));
            }
        }
        for i in 0..self.u_min.len() {
            if self.u_min[i] >= self.u_max[i] {
                return Err(GeometryError::InvalidScene(format!(
                    "u_min[{i}] >= u_max[{i}]"
                )));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(GeometryError::InvalidScene("epsilon must be > 0".into()));
        }
        if self.agent_radius < 0.0 {
            return Err(GeometryError::InvalidScene("agent_radius < 0".into()));
        }
        for (j, o) in self.obstacles.iter().enumerate() {
            if o.radius_m <= 0.0 {
                return Err(GeometryError::InvalidScene(format!(
                    "obstacle {j} radius must be > 0"
                )));
            }
        }
        Ok(())
    }

    /// Clearance of a position against one inflated obstacle (negative means
    /// penetration).
    pub fn obstacle_clearance(&self, pos: &DVector<f64>, obs: &SphereObstacle) -> f64 {
        (pos - obs.center()).norm() - (obs.radius_m + self.agent_radius)
    }

    /// Minimum clearance of a position over all obstacles; +inf when empty.
    pub fn min_obstacle_clearance(&self, pos: &DVector<f64>) -> f64 {
        self.obstacles
            .iter()
            .map(|o| self.obstacle_clearance(pos, o))
            .fold(f64::INFINITY, f64::min)
    }

    /// Margin of an input against the box (negative = violation).
    pub fn input_margin(&self, u: &DVector<f64>) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..u.len() {
            m = m.min(u[i] - self.u_min[i]).min(self.u_max[i] - u[i]);
        }
        m
    }

    fn box_margin(&self, x: &DVector<f64>) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..x.len() {
            m = m.min(x[i] - self.x_min[i]).min(self.x_max[i] - x[i]);
        }
        m
    }
}

/// `{x : normal' x <= offset}`.
#[derive(Debug, Clone)]
pub struct Halfspace {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.normal.dot(x) <= self.offset
    }

    /// Signed slack `offset - normal' x` (positive inside).
    pub fn slack(&self, x: &DVector<f64>) -> f64 {
        self.offset - self.normal.dot(x)
    }
}

/// Projection of a position onto the surface of the inflated sphere:
/// `o + (x - o) / ||x - o|| * (r_o + r_a)`.
pub fn project_onto_obstacle(
    obs: &SphereObstacle,
    agent_radius: f64,
    x_pos: &DVector<f64>,
) -> Result<DVector<f64>, GeometryError> {
    let center = obs.center();
    let diff = x_pos - &center;
    let dist = diff.norm();
    if dist < 1e-12 {
        return Err(GeometryError::DegenerateProjection);
    }
    Ok(center + diff * ((obs.radius_m + agent_radius) / dist))
}

/// Half-space over-approximation of the free space around an obstacle,
/// linearized at the full state `x`:
/// normal `Xi' unit(o - Xi x)`, offset `unit(o - Xi x)' o - r_a - r_o`.
pub fn halfspace_approximation(
    obs: &SphereObstacle,
    agent_radius: f64,
    xi_map: &DMatrix<f64>,
    x: &DVector<f64>,
) -> Result<Halfspace, GeometryError> {
    let pos = xi_map * x;
    halfspace_at_position(obs, agent_radius, xi_map, &pos)
}

/// Same construction from a raw position vector.
pub fn halfspace_at_position(
    obs: &SphereObstacle,
    agent_radius: f64,
    xi_map: &DMatrix<f64>,
    pos: &DVector<f64>,
) -> Result<Halfspace, GeometryError> {
    let center = obs.center();
    let dir = &center - pos;
    let dist = dir.norm();
    if dist < 1e-12 {
        return Err(GeometryError::DegenerateProjection);
    }
    let unit = dir / dist;
    let normal = xi_map.transpose() * &unit;
    let offset = unit.dot(&center) - agent_radius - obs.radius_m;
    Ok(Halfspace { normal, offset })
}

/// Box-and-obstacle admissibility of a full state. Returns the verdict and
/// the worst constraint margin (negative = violation magnitude).
pub fn is_state_admissible(scene: &Scene, model: &LtiModel, x: &DVector<f64>) -> (bool, f64) {
    let mut margin = scene.box_margin(x);
    if !scene.obstacles.is_empty() {
        let pos = model.position_of(x);
        margin = margin.min(scene.min_obstacle_clearance(&pos));
    }
    (margin >= 0.0, margin)
}

/// Strict steady-state admissibility of a reference: equilibrium state and
/// input hold all constraints with margin at least `scene.epsilon`.
pub fn is_reference_strictly_admissible(scene: &Scene, model: &LtiModel, r: &DVector<f64>) -> bool {
    reference_margin(scene, model, r)
        .map(|m| m >= scene.epsilon)
        .unwrap_or(false)
}

/// Worst constraint margin of the equilibrium pair for `r`.
pub fn reference_margin(scene: &Scene, model: &LtiModel, r: &DVector<f64>) -> Option<f64> {
    let (x_bar, u_bar) = model.equilibrium_for_reference(r).ok()?;
    let mut m = scene.box_margin(&x_bar).min(scene.input_margin(&u_bar));
    if !scene.obstacles.is_empty() {
        let pos = model.position_of(&x_bar);
        m = m.min(scene.min_obstacle_clearance(&pos));
    }
    Some(m)
}

/// Exact distance between a segment `[a, b]` and a point.
pub fn segment_point_distance(a: &DVector<f64>, b: &DVector<f64>, p: &DVector<f64>) -> f64 {
    let ab = b - a;
    let denom = ab.dot(&ab);
    if denom < 1e-18 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / denom).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Minimum obstacle clearance along a position segment (closed form, no
/// sampling error).
pub fn segment_min_clearance(scene: &Scene, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    scene
        .obstacles
        .iter()
        .map(|o| segment_point_distance(a, b, &o.center()) - (o.radius_m + scene.agent_radius))
        .fold(f64::INFINITY, f64::min)
}
