//! Scenario configuration: JSON schema, parsing, and validation.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Scene, SphereObstacle};
use crate::planner::{PfParams, PlannerConfig, PlannerKind, RrtParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub mass_kg: f64,
    pub gravity_mps2: f64,
    pub ts_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub state_min: Vec<f64>,
    pub state_max: Vec<f64>,
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub obstacles: Vec<SphereObstacle>,
    pub agent_radius_m: f64,
    pub epsilon_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q_position: f64,
    pub q_velocity: f64,
    pub q_attitude: f64,
    pub r_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub kind: PlannerKind,
    #[serde(default)]
    pub rrt: RrtParams,
    #[serde(default)]
    pub pf: PfParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernorSection {
    pub grid_step: f64,
    pub bisect_tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub model: ModelSection,
    pub scene: SceneSection,
    pub start_state: Vec<f64>,
    pub goal_reference_m: Vec<f64>,
    pub horizon: usize,
    pub cost: CostSection,
    pub planner: PlannerSection,
    pub governor: GovernorSection,
    pub max_steps: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Invalid(m));
        if !(self.model.mass_kg > 0.0) {
            return err("model.mass_kg: must be positive".into());
        }
        if !(self.model.ts_s > 0.0) {
            return err("model.ts_s: must be positive".into());
        }
        if self.scene.state_min.len() != 9 || self.scene.state_max.len() != 9 {
            return err("scene.state_min/state_max: must have 9 entries".into());
        }
        if self.scene.input_min.len() != 4 || self.scene.input_max.len() != 4 {
            return err("scene.input_min/input_max: must have 4 entries".into());
        }
        for i in 0..9 {
            if self.scene.state_min[i] >= self.scene.state_max[i] {
                return err(format!("scene.state_min[{i}]: must be below state_max[{i}]"));
            }
        }
        for i in 0..4 {
            if self.scene.input_min[i] >= self.scene.input_max[i] {
                return err(format!("scene.input_min[{i}]: must be below input_max[{i}]"));
            }
        }
        for (i, o) in self.scene.obstacles.iter().enumerate() {
            if o.center_m.len() != 3 {
                return err(format!("scene.obstacles[{i}].center_m: must have 3 entries"));
            }
            if !(o.radius_m > 0.0) {
                return err(format!("scene.obstacles[{i}].radius_m: must be positive"));
            }
        }
        if !(self.scene.agent_radius_m >= 0.0) {
            return err("scene.agent_radius_m: must be nonnegative".into());
        }
        if !(self.scene.epsilon_m > 0.0) {
            return err("scene.epsilon_m: must be positive".into());
        }
        if self.start_state.len() != 9 {
            return err("start_state: must have 9 entries".into());
        }
        if self.goal_reference_m.len() != 3 {
            return err("goal_reference_m: must have 3 entries".into());
        }
        if self.horizon < 1 {
            return err("horizon: must be >= 1".into());
        }
        for (v, name) in [
            (self.cost.q_position, "cost.q_position"),
            (self.cost.q_velocity, "cost.q_velocity"),
            (self.cost.q_attitude, "cost.q_attitude"),
            (self.cost.r_scale, "cost.r_scale"),
        ] {
            if !(v > 0.0) {
                return err(format!("{name}: must be positive"));
            }
        }
        self.planner_config()
            .validate()
            .map_err(|m| ConfigError::Invalid(format!("planner.{m}")))?;
        if !(self.governor.grid_step > 0.0
            && self.governor.bisect_tol > 0.0
            && self.governor.bisect_tol <= self.governor.grid_step
            && self.governor.grid_step <= 1.0)
        {
            return err("governor: need 0 < bisect_tol <= grid_step <= 1".into());
        }
        if self.max_steps < 1 {
            return err("max_steps: must be >= 1".into());
        }
        self.to_scene()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("scene: {e}")))?;
        Ok(())
    }

    pub fn to_scene(&self) -> Scene {
        Scene {
            x_min: DVector::from_row_slice(&self.scene.state_min),
            x_max: DVector::from_row_slice(&self.scene.state_max),
            u_min: DVector::from_row_slice(&self.scene.input_min),
            u_max: DVector::from_row_slice(&self.scene.input_max),
            obstacles: self.scene.obstacles.clone(),
            agent_radius: self.scene.agent_radius_m,
            epsilon: self.scene.epsilon_m,
        }
    }

    /// The planner configuration with the run seed applied.
    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig {
            kind: self.planner.kind,
            seed: self.seed,
            rrt: self.planner.rrt.clone(),
            pf: self.planner.pf.clone(),
        }
    }

    pub fn start_state_vec(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.start_state)
    }

    pub fn goal_vec(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.goal_reference_m)
    }
}

pub fn load_config(path: &Path) -> Result<SimConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cfg: SimConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// The shipped quadrotor scenario as a config value (what
/// `scenes/paper_quadrotor.json` contains).
pub fn paper_config() -> SimConfig {
    let scene = crate::scenes::paper_scene();
    let mut start_state = vec![0.0; 9];
    start_state[0] = 0.1;
    start_state[1] = 0.1;
    start_state[2] = 0.3;
    SimConfig {
        model: ModelSection {
            mass_kg: 0.032,
            gravity_mps2: -9.81,
            ts_s: 0.1,
        },
        scene: SceneSection {
            state_min: scene.x_min.as_slice().to_vec(),
            state_max: scene.x_max.as_slice().to_vec(),
            input_min: scene.u_min.as_slice().to_vec(),
            input_max: scene.u_max.as_slice().to_vec(),
            obstacles: scene.obstacles.clone(),
            agent_radius_m: scene.agent_radius,
            epsilon_m: scene.epsilon,
        },
        start_state,
        goal_reference_m: vec![2.5, 2.5, 1.0],
        horizon: 5,
        cost: CostSection {
            q_position: 10.0,
            q_velocity: 0.5,
            q_attitude: 2.5,
            r_scale: 0.1,
        },
        planner: PlannerSection {
            kind: PlannerKind::RrtStar,
            rrt: RrtParams::default(),
            pf: PfParams::default(),
        },
        governor: GovernorSection {
            grid_step: 0.01,
            bisect_tol: 1e-4,
        },
        max_steps: 600,
        seed: 1,
    }
}
