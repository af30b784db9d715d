use std::f64::consts::PI;

use rand::{Rng as _, SeedableRng};

use super::{matrix_from_edges, wrap_angle, EnvConfig, Preset, MOBILE_REACH_2D};
use crate::error::{Error, Result};
use crate::matrix::CausalMatrix;
use crate::mdp::{ActionVector, RewardVector, StagedEnv, StagedTaskSpec, StepOutcome, Transition};
use crate::rng::Rng;

const ARENA: (f64, f64) = (0.0, 10.0);
const REACH_LO: [f64; 3] = [0.1, -0.4, 0.3];
const REACH_HI: [f64; 3] = [0.8, 0.4, 1.2];
const OBS_DIM: usize = 13;
const N_ACTIONS: usize = 5;

const R_RHO: usize = 0;
const R_THETA: usize = 1;
const R_EEF: usize = 2; // x, y, z at 2..5
const R_BONUS: usize = 5;
const R_BASE: usize = 6;
const R_ARM: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct MobileReachState {
    pub base_xy: [f64; 2],
    /// rad, wrapped to (-pi, pi]
    pub heading: f64,
    /// end effector in the base frame
    pub eef_offset: [f64; 3],
    /// world frame
    pub target: [f64; 3],
    /// applied forward and turn motion of the last step
    pub last_speeds: [f64; 2],
}

impl MobileReachState {
    fn eef_world(&self) -> [f64; 3] {
        let (s, c) = self.heading.sin_cos();
        let [ox, oy, oz] = self.eef_offset;
        [
            self.base_xy[0] + c * ox - s * oy,
            self.base_xy[1] + s * ox + c * oy,
            oz,
        ]
    }

    fn polar(&self) -> (f64, f64) {
        let dx = self.target[0] - self.base_xy[0];
        let dy = self.target[1] - self.base_xy[1];
        let rho = dx.hypot(dy);
        let theta = wrap_angle(dy.atan2(dx) - self.heading);
        (rho, theta)
    }

    fn eef_errors(&self) -> [f64; 3] {
        let e = self.eef_world();
        [
            (e[0] - self.target[0]).abs(),
            (e[1] - self.target[1]).abs(),
            (e[2] - self.target[2]).abs(),
        ]
    }

    fn observation(&self) -> Vec<f64> {
        let (rho, theta) = self.polar();
        let [ex, ey, ez] = self.eef_offset;
        let tx = rho * theta.cos();
        let ty = rho * theta.sin();
        let tz = self.target[2];
        vec![
            rho,
            theta,
            tz,
            self.last_speeds[0],
            self.last_speeds[1],
            ex,
            ey,
            ez,
            self.heading.cos(),
            self.heading.sin(),
            tx - ex,
            ty - ey,
            tz - ez,
        ]
    }
}

/// Planar base with a three-axis arm reaching a 3-D target.
///
/// Actions: `forward, turn, armx, army, armz`. Stage 1 drives the base within
/// `rho_near` of the target, stage 2 turns to face it within `theta_face`,
/// stage 3 places the end effector within `success_tol` of it.
#[derive(Debug, Clone)]
pub struct MobileReach2D {
    config: EnvConfig,
    spec: StagedTaskSpec,
    state: MobileReachState,
    rng: Rng,
    steps: usize,
}

impl MobileReach2D {
    pub fn new(config: EnvConfig) -> Self {
        let spec = StagedTaskSpec::new(
            ["forward", "turn", "armx", "army", "armz"]
                .map(String::from)
                .to_vec(),
            [
                "r_rho",
                "r_theta",
                "r_eefx",
                "r_eefy",
                "r_eefz",
                "r_bonus",
                "r_base_collision",
                "r_arm_collision",
            ]
            .map(String::from)
            .to_vec(),
            vec![vec![R_RHO], vec![R_THETA], vec![R_EEF, R_EEF + 1, R_EEF + 2]],
            vec![R_BONUS, R_BASE, R_ARM],
        )
        .expect("static task layout is valid");
        let rng = Rng::seed_from_u64(config.seed);
        let mut env = Self {
            config,
            spec,
            state: MobileReachState {
                base_xy: [5.0, 5.0],
                heading: 0.0,
                eef_offset: [0.3, 0.0, 0.6],
                target: [8.0, 5.0, 0.7],
                last_speeds: [0.0, 0.0],
            },
            rng,
            steps: 0,
        };
        env.reset();
        env
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &MobileReachState {
        &self.state
    }

    pub fn set_state(&mut self, state: MobileReachState) {
        self.state = state;
        self.steps = 0;
    }

    fn stage_from_polar(&self, rho: f64, theta: f64) -> usize {
        let t = &self.config.params.thresholds;
        if rho > t.rho_near {
            1
        } else if theta.abs() > t.theta_face {
            2
        } else {
            3
        }
    }

    fn current_stage(&self) -> usize {
        let (rho, theta) = self.state.polar();
        self.stage_from_polar(rho, theta)
    }

    fn sample_target(&mut self) -> [f64; 3] {
        [
            self.rng.random_range(2.0..8.0),
            self.rng.random_range(2.0..8.0),
            self.rng.random_range(0.5..1.0),
        ]
    }

    fn sample_eef(&mut self) -> [f64; 3] {
        [
            self.rng.random_range(0.2..0.5),
            self.rng.random_range(-0.2..0.2),
            self.rng.random_range(0.5..0.9),
        ]
    }

    /// Places the base at polar coordinates (rho, theta) of the target.
    fn place(&mut self, target: [f64; 3], rho: f64, theta: f64, eef: [f64; 3]) {
        let heading = self.rng.random_range(-PI..PI);
        let bearing = heading + theta;
        self.state = MobileReachState {
            base_xy: [
                target[0] - rho * bearing.cos(),
                target[1] - rho * bearing.sin(),
            ],
            heading: wrap_angle(heading),
            eef_offset: eef,
            target,
            last_speeds: [0.0, 0.0],
        };
        self.steps = 0;
    }
}

impl StagedEnv for MobileReach2D {
    fn name(&self) -> &'static str {
        MOBILE_REACH_2D
    }

    fn spec(&self) -> &StagedTaskSpec {
        &self.spec
    }

    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn obs_scale(&self) -> Vec<f64> {
        vec![
            3.0, PI, 0.25, 0.1, 0.15, 0.3, 0.3, 0.3, 1.0, 1.0, 1.0, 1.0, 0.3,
        ]
    }

    fn max_steps(&self) -> usize {
        self.config.params.max_steps
    }

    fn seed(&mut self, seed: u64) {
        self.rng = Rng::seed_from_u64(seed);
    }

    fn reset(&mut self) -> Vec<f64> {
        let target = self.sample_target();
        let eef = self.sample_eef();
        loop {
            let base = [
                self.rng.random_range(1.0..9.0),
                self.rng.random_range(1.0..9.0),
            ];
            let heading = self.rng.random_range(-PI..PI);
            let rho = (target[0] - base[0]).hypot(target[1] - base[1]);
            if rho >= 1.0 {
                self.state = MobileReachState {
                    base_xy: base,
                    heading,
                    eef_offset: eef,
                    target,
                    last_speeds: [0.0, 0.0],
                };
                break;
            }
        }
        self.steps = 0;
        self.observe()
    }

    fn reset_to_stage(&mut self, stage: usize) -> Result<Vec<f64>> {
        let t = self.config.params.thresholds.clone();
        match stage {
            1 => return Ok(self.reset()),
            2 => {
                let target = self.sample_target();
                let eef = self.sample_eef();
                let rho = self.rng.random_range(0.4 * t.rho_near..0.92 * t.rho_near);
                let mag = self.rng.random_range((t.theta_face + 0.05).min(PI)..PI);
                let theta = if self.rng.random_bool(0.5) { mag } else { -mag };
                self.place(target, rho, theta, eef);
            }
            3 => {
                let target = self.sample_target();
                let eef = self.sample_eef();
                let rho = self.rng.random_range(0.4 * t.rho_near..0.92 * t.rho_near);
                let theta = self.rng.random_range(-0.95 * t.theta_face..0.95 * t.theta_face);
                self.place(target, rho, theta, eef);
            }
            _ => {
                return Err(Error::Config(format!(
                    "{MOBILE_REACH_2D} has no stage {stage}"
                )))
            }
        }
        let obs = self.observe();
        debug_assert_eq!(self.stage_of(&obs).ok(), Some(stage));
        Ok(obs)
    }

    fn observe(&self) -> Vec<f64> {
        self.state.observation()
    }

    fn stage_of(&self, obs: &[f64]) -> Result<usize> {
        if obs.len() != OBS_DIM {
            return Err(Error::dim("mobile_reach_2d observation", OBS_DIM, obs.len()));
        }
        Ok(self.stage_from_polar(obs[0], obs[1]))
    }

    fn step(&mut self, action: &ActionVector) -> Result<StepOutcome> {
        if action.len() != N_ACTIONS {
            return Err(Error::dim("mobile_reach_2d action", N_ACTIONS, action.len()));
        }
        let p = &self.config.params;
        let obs = self.observe();
        let stage = self.current_stage();
        let (rho0, theta0) = self.state.polar();
        let eef0 = self.state.eef_errors();

        let frozen = self.config.preset == Preset::Decoupled && stage == 3;
        let (gf, gt) = if frozen {
            (0.0, 0.0)
        } else {
            (p.gains.forward, p.gains.turn)
        };
        let fwd = gf * action[0];
        let turn = gt * action[1];
        let mut reward = [0.0; 8];

        let s = &mut self.state;
        let move_heading = match self.config.preset {
            Preset::Coupled => s.heading + turn,
            Preset::Decoupled => s.heading,
        };
        let mut bx = s.base_xy[0] + fwd * move_heading.cos();
        let mut by = s.base_xy[1] + fwd * move_heading.sin();
        if !(ARENA.0..=ARENA.1).contains(&bx) || !(ARENA.0..=ARENA.1).contains(&by) {
            bx = bx.clamp(ARENA.0, ARENA.1);
            by = by.clamp(ARENA.0, ARENA.1);
            reward[R_BASE] = p.bonuses.collision;
        }
        s.base_xy = [bx, by];
        s.heading = wrap_angle(s.heading + turn);
        s.last_speeds = [fwd, turn];

        let mut arm_clamped = false;
        for i in 0..3 {
            let want = s.eef_offset[i] + p.gains.arm * action[2 + i];
            let got = want.clamp(REACH_LO[i], REACH_HI[i]);
            arm_clamped |= got != want;
            s.eef_offset[i] = got;
        }
        if arm_clamped {
            reward[R_ARM] = p.bonuses.collision;
        }

        let (rho1, theta1) = s.polar();
        let eef1 = s.eef_errors();
        let lambda = p.lambda;
        reward[R_RHO] = lambda * (rho0 - rho1);
        reward[R_THETA] = lambda * (theta0.abs() - theta1.abs());
        for i in 0..3 {
            reward[R_EEF + i] = lambda * (eef0[i] - eef1[i]);
        }

        let next_stage = self.stage_from_polar(rho1, theta1);
        let dist = eef1.iter().map(|d| d * d).sum::<f64>().sqrt();
        let success = next_stage == 3 && dist < p.thresholds.success_tol;
        if next_stage > stage || success {
            reward[R_BONUS] = p.bonuses.stage_advance;
        }
        self.steps += 1;
        let truncated = !success && self.steps >= p.max_steps;
        Ok(StepOutcome {
            transition: Transition {
                state: obs,
                action: action.clone(),
                reward: RewardVector::new(reward.to_vec())?,
                next_state: self.observe(),
                stage,
                next_stage,
                terminal: success,
            },
            success,
            truncated,
        })
    }

    fn ground_truth(&self, stage: usize) -> Result<CausalMatrix> {
        let cols = self.spec.names_of(self.spec.stage_terms(stage)?);
        let coupled = self.config.preset == Preset::Coupled;
        let mut edges: Vec<(&str, &str)> = match stage {
            1 => vec![("forward", "r_rho")],
            2 => vec![("forward", "r_theta"), ("turn", "r_theta")],
            _ => vec![
                ("armx", "r_eefx"),
                ("armx", "r_eefy"),
                ("army", "r_eefx"),
                ("army", "r_eefy"),
                ("armz", "r_eefz"),
            ],
        };
        if coupled {
            match stage {
                1 => edges.push(("turn", "r_rho")),
                3 => edges.extend([
                    ("forward", "r_eefx"),
                    ("forward", "r_eefy"),
                    ("turn", "r_eefx"),
                    ("turn", "r_eefy"),
                ]),
                _ => {}
            }
        }
        Ok(matrix_from_edges(
            stage,
            &self.spec.action_names,
            &cols,
            &edges,
        ))
    }

    fn box_clone(&self) -> Box<dyn StagedEnv> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(preset: Preset) -> MobileReach2D {
        MobileReach2D::new(EnvConfig::new(preset, 1))
    }

    fn state(rho: f64, theta: f64) -> MobileReachState {
        MobileReachState {
            base_xy: [5.0, 5.0],
            heading: 0.0,
            eef_offset: [0.3, 0.0, 0.6],
            target: [5.0 + rho * theta.cos(), 5.0 + rho * theta.sin(), 0.7],
            last_speeds: [0.0, 0.0],
        }
    }

    fn act(v: [f64; 5]) -> ActionVector {
        ActionVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn stage_rule_examples() {
        let mut e = env(Preset::Coupled);
        e.set_state(state(3.0, 0.0));
        assert_eq!(e.stage_of(&e.observe()).unwrap(), 1);
        e.set_state(state(0.3, 0.5));
        assert_eq!(e.stage_of(&e.observe()).unwrap(), 2);
        e.set_state(state(0.3, 0.05));
        assert_eq!(e.stage_of(&e.observe()).unwrap(), 3);
        assert!(matches!(
            e.stage_of(&[0.0; 3]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn forward_toward_target_gives_unit_reward() {
        let mut e = env(Preset::Coupled);
        e.set_state(state(3.0, 0.0));
        let out = e.step(&act([1.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((out.transition.reward[R_RHO] - 1.0).abs() < 1e-9);
        assert_eq!(out.transition.stage, 1);
    }

    #[test]
    fn zero_action_changes_nothing() {
        let mut e = env(Preset::Coupled);
        e.reset();
        let before = e.state().clone();
        let out = e.step(&act([0.0; 5])).unwrap();
        assert_eq!(e.state().base_xy, before.base_xy);
        assert_eq!(e.state().eef_offset, before.eef_offset);
        for j in 0..5 {
            assert_eq!(out.transition.reward[j], 0.0);
        }
    }

    #[test]
    fn decoupled_stage3_freezes_base() {
        let mut e = env(Preset::Decoupled);
        e.set_state(state(0.3, 0.05));
        let before = e.state().clone();
        let out = e.step(&act([1.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(e.state().base_xy, before.base_xy);
        for j in R_EEF..R_EEF + 3 {
            assert_eq!(out.transition.reward[j], 0.0);
        }
    }

    #[test]
    fn arm_clamp_sets_penalty() {
        let mut e = env(Preset::Coupled);
        let mut s = state(3.0, 0.0);
        s.eef_offset = [0.79, 0.0, 0.6];
        e.set_state(s);
        let out = e.step(&act([0.0, 0.0, 1.0, 0.0, 0.0])).unwrap();
        assert_eq!(out.transition.reward[R_ARM], -1.0);
        assert_eq!(e.state().eef_offset[0], 0.8);
    }

    #[test]
    fn reset_to_stage_lands_in_stage() {
        for preset in [Preset::Coupled, Preset::Decoupled] {
            let mut e = env(preset);
            for stage in 1..=3 {
                for _ in 0..50 {
                    let obs = e.reset_to_stage(stage).unwrap();
                    assert_eq!(e.stage_of(&obs).unwrap(), stage);
                }
            }
            assert!(matches!(e.reset_to_stage(4), Err(Error::Config(_))));
        }
    }

    #[test]
    fn stage2_reset_example() {
        let mut e = env(Preset::Coupled);
        let obs = e.reset_to_stage(2).unwrap();
        assert!(obs[0] <= 0.6 && obs[1].abs() > 0.2);
    }

    #[test]
    fn coupled_stage3_every_action_reaches_an_eef_column() {
        let e = env(Preset::Coupled);
        let m = e.ground_truth(3).unwrap();
        for k in 0..5 {
            assert!(m.row_sum(k) > 0, "action {k} has no eef edge");
        }
        let d = env(Preset::Decoupled).ground_truth(1).unwrap();
        assert_eq!(d.column(0), vec![1, 0, 0, 0, 0]);
    }
}
