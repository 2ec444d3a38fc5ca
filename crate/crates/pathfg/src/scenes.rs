//! Built-in quadrotor scenario and its cost matrices.

use nalgebra::{DMatrix, DVector};

use crate::geometry::{Scene, SphereObstacle};

pub const QUAD_HOVER_THRUST_N: f64 = 0.032 * 9.81;

/// Cluttered 3D scenario: six spherical obstacles between the start corner
/// and the goal, tight enough that a short-horizon controller cannot reach
/// the goal reference directly.
pub fn paper_scene() -> Scene {
    let ang = 0.2 * std::f64::consts::PI;
    let half_pi = 0.5 * std::f64::consts::PI;
    Scene {
        x_min: DVector::from_row_slice(&[
            -10.0, -10.0, -10.0, -1.0, -1.0, -1.0, -ang, -ang, -ang,
        ]),
        x_max: DVector::from_row_slice(&[10.0, 10.0, 10.0, 1.0, 1.0, 1.0, ang, ang, ang]),
        u_min: DVector::from_row_slice(&[-QUAD_HOVER_THRUST_N, -half_pi, -half_pi, -half_pi]),
        u_max: DVector::from_row_slice(&[
            0.59 - QUAD_HOVER_THRUST_N,
            half_pi,
            half_pi,
            half_pi,
        ]),
        obstacles: vec![
            SphereObstacle { center_m: vec![0.8, 0.7, 0.5], radius_m: 0.30 },
            SphereObstacle { center_m: vec![1.6, 1.0, 0.7], radius_m: 0.35 },
            SphereObstacle { center_m: vec![1.0, 1.7, 0.6], radius_m: 0.35 },
            SphereObstacle { center_m: vec![2.0, 2.0, 0.9], radius_m: 0.30 },
            SphereObstacle { center_m: vec![1.5, 2.4, 0.8], radius_m: 0.25 },
            SphereObstacle { center_m: vec![2.3, 1.4, 0.6], radius_m: 0.25 },
        ],
        agent_radius: 0.08,
        epsilon: 0.02,
    }
}

/// Stage costs used throughout the quadrotor study:
/// `Q = blockdiag(10 I3, 0.5 I3, 2.5 I3)`, `R = I4 / 10`.
pub fn paper_cost_matrices() -> (DMatrix<f64>, DMatrix<f64>) {
    let mut q = DMatrix::zeros(9, 9);
    for i in 0..3 {
        q[(i, i)] = 10.0;
        q[(3 + i, 3 + i)] = 0.5;
        q[(6 + i, 6 + i)] = 2.5;
    }
    let r = DMatrix::identity(4, 4) * 0.1;
    (q, r)
}

pub fn paper_start_position() -> DVector<f64> {
    DVector::from_row_slice(&[0.1, 0.1, 0.3])
}

pub fn paper_goal_position() -> DVector<f64> {
    DVector::from_row_slice(&[2.5, 2.5, 1.0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_quadrotor_model, QuadrotorParams};

    #[test]
    fn scene_is_valid_and_endpoints_admissible() {
        let scene = paper_scene();
        scene.validate().unwrap();
        let model = build_quadrotor_model(&QuadrotorParams::default()).unwrap();
        for p in [paper_start_position(), paper_goal_position()] {
            assert!(crate::geometry::is_reference_strictly_admissible(
                &scene, &model, &p
            ));
        }
    }
}
