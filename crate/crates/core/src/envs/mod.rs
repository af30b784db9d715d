//! Analytic kinematic task environments with known causal structure.
//!
//! * [`MobileReach2D`]: navigate a planar base near a target, face it, then
//!   place the end effector on it (three stages).
//! * [`GraspKinematic`]: hover above a box, orient the gripper, lower, and
//!   close (four stages).
//!
//! Both expose a per-stage ground-truth causal matrix that discovery results
//! are validated against.

mod grasp;
mod mobile;

pub use grasp::{project_to_reach, GraspKinematic, GraspKinematicState, REACH_RADIUS};
pub use mobile::{MobileReach2D, MobileReachState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::CausalMatrix;
use crate::mdp::StagedEnv;

pub const MOBILE_REACH_2D: &str = "mobile_reach_2d";
pub const GRASP_KINEMATIC: &str = "grasp_kinematic";

/// Locomotion coupling of [`MobileReach2D`].
///
/// `Coupled`: the turn is applied before the forward motion, and the base
/// keeps moving in the reaching stage. `Decoupled`: the forward motion uses
/// the pre-turn heading and the base is frozen in the reaching stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Coupled,
    Decoupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gains {
    /// m per unit action
    pub forward: f64,
    /// rad per unit action
    pub turn: f64,
    /// m per unit action, mobile arm
    pub arm: f64,
    /// m per unit action, grasp arm
    pub translate: f64,
    /// rad per unit action, grasp wrist
    pub rotate: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            forward: 0.1,
            turn: 0.15,
            arm: 0.05,
            translate: 0.04,
            rotate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub rho_near: f64,
    pub theta_face: f64,
    pub horizontal_tol: f64,
    pub hover_tol: f64,
    pub orientation_tol: f64,
    pub lower_tol: f64,
    pub success_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rho_near: 0.6,
            theta_face: 0.2,
            horizontal_tol: 0.03,
            hover_tol: 0.03,
            orientation_tol: 0.1,
            lower_tol: 0.02,
            success_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bonuses {
    pub stage_advance: f64,
    pub grasp: f64,
    pub premature_close: f64,
    pub collision: f64,
}

impl Default for Bonuses {
    fn default() -> Self {
        Self {
            stage_advance: 5.0,
            grasp: 1.0,
            premature_close: -0.5,
            collision: -1.0,
        }
    }
}

/// Tunable environment parameters (everything except the preset and seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    pub gains: Gains,
    pub lambda: f64,
    pub thresholds: Thresholds,
    pub bonuses: Bonuses,
    pub max_steps: usize,
    /// std of end-effector translation noise per axis at full command, m (grasp only);
    /// scales with the largest translation command
    pub translate_noise: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            gains: Gains::default(),
            lambda: 10.0,
            thresholds: Thresholds::default(),
            bonuses: Bonuses::default(),
            max_steps: 500,
            translate_noise: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EnvConfig {
    pub preset: Preset,
    pub params: EnvParams,
    pub seed: u64,
}

impl EnvConfig {
    pub fn new(preset: Preset, seed: u64) -> Self {
        Self {
            preset,
            params: EnvParams::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let g = &p.gains;
        let t = &p.thresholds;
        let positive = [
            ("gains.forward", g.forward),
            ("gains.turn", g.turn),
            ("gains.arm", g.arm),
            ("gains.translate", g.translate),
            ("gains.rotate", g.rotate),
            ("lambda", p.lambda),
            ("thresholds.rho_near", t.rho_near),
            ("thresholds.theta_face", t.theta_face),
            ("thresholds.horizontal_tol", t.horizontal_tol),
            ("thresholds.hover_tol", t.hover_tol),
            ("thresholds.orientation_tol", t.orientation_tol),
            ("thresholds.lower_tol", t.lower_tol),
            ("thresholds.success_tol", t.success_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(p.translate_noise >= 0.0 && p.translate_noise.is_finite()) {
            return Err(Error::Config(format!(
                "translate_noise must be >= 0, got {}",
                p.translate_noise
            )));
        }
        if p.max_steps == 0 {
            return Err(Error::Config("max_steps must be > 0".into()));
        }
        Ok(())
    }
}

/// Builds an environment by name.
pub fn make_env(name: &str, config: EnvConfig) -> Result<Box<dyn StagedEnv>> {
    config.validate()?;
    match name {
        MOBILE_REACH_2D => Ok(Box::new(MobileReach2D::new(config))),
        GRASP_KINEMATIC => {
            if config.preset != Preset::Coupled {
                log::warn!("preset is ignored by {GRASP_KINEMATIC}");
            }
            Ok(Box::new(GraspKinematic::new(config)))
        }
        other => Err(Error::Config(format!(
            "unknown env '{other}' (expected {MOBILE_REACH_2D} or {GRASP_KINEMATIC})"
        ))),
    }
}

/// Ground-truth matrices of every stage, in stage order.
pub fn ground_truth(env: &dyn StagedEnv) -> Result<Vec<CausalMatrix>> {
    (1..=env.spec().n_stages)
        .map(|s| env.ground_truth(s))
        .collect()
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    if a > -PI && a <= PI {
        return a;
    }
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

/// Matrix from a list of (action, reward) edges.
pub(crate) fn matrix_from_edges(
    stage: usize,
    actions: &[String],
    rewards: &[String],
    edges: &[(&str, &str)],
) -> CausalMatrix {
    let mut m = CausalMatrix::zeros(stage, actions.to_vec(), rewards.to_vec());
    for (a, r) in edges {
        if let (Some(k), Some(j)) = (m.action_index(a), m.reward_index(r)) {
            m.set(k, j, true);
        }
    }
    m
}
