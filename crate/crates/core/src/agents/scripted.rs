//! Hand-written controllers that solve each task; used as evaluation oracles.

use super::eval::StagePolicy;
use crate::envs::{EnvParams, GRASP_KINEMATIC, MOBILE_REACH_2D};
use crate::error::{Error, Result};
use crate::mdp::{ActionVector, StagedEnv};

fn sat(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Proportional controller for `mobile_reach_2d`.
#[derive(Debug, Clone)]
pub struct MobileScripted {
    pub params: EnvParams,
}

impl StagePolicy for MobileScripted {
    fn act(&mut self, stage: usize, obs: &[f64]) -> Result<ActionVector> {
        let g = &self.params.gains;
        let (rho, theta) = (obs[0], obs[1]);
        let a = match stage {
            1 => {
                let fwd = if theta.abs() < 0.3 { sat(rho / g.forward) } else { 0.0 };
                vec![fwd, sat(theta / g.turn), 0.0, 0.0, 0.0]
            }
            2 => vec![0.0, sat(theta / g.turn), 0.0, 0.0, 0.0],
            _ => vec![
                0.0,
                0.0,
                sat(obs[10] / g.arm),
                sat(obs[11] / g.arm),
                sat(obs[12] / g.arm),
            ],
        };
        ActionVector::new(a)
    }
}

/// Proportional controller for `grasp_kinematic`.
#[derive(Debug, Clone)]
pub struct GraspScripted {
    pub params: EnvParams,
}

impl StagePolicy for GraspScripted {
    fn act(&mut self, stage: usize, obs: &[f64]) -> Result<ActionVector> {
        let g = &self.params.gains;
        let (dx, dy) = (obs[11], obs[12]);
        let (pitch, roll) = (obs[7], obs[8]);
        let t = sat(-dx / g.translate);
        let u = sat(-dy / g.translate);
        let rx = sat(-pitch / g.rotate);
        let ry = sat(-roll / g.rotate);
        let a = match stage {
            1 => vec![t, u, sat(-obs[13] / g.translate), rx, ry, 0.0, -1.0],
            2 => vec![t, u, sat(-obs[13] / g.translate), rx, ry, 0.0, -1.0],
            3 => vec![t, u, sat(-obs[14] / g.translate), rx, ry, 0.0, -1.0],
            _ => vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        };
        ActionVector::new(a)
    }
}

/// The scripted controller for `env`.
pub fn scripted_policy(env: &dyn StagedEnv, params: &EnvParams) -> Result<Box<dyn StagePolicy>> {
    match env.name() {
        MOBILE_REACH_2D => Ok(Box::new(MobileScripted { params: params.clone() })),
        GRASP_KINEMATIC => Ok(Box::new(GraspScripted { params: params.clone() })),
        other => Err(Error::Config(format!("no scripted controller for {other}"))),
    }
}
