use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

use super::{matrix_from_edges, wrap_angle, EnvConfig, GRASP_KINEMATIC};
use crate::error::{Error, Result};
use crate::matrix::CausalMatrix;
use crate::mdp::{ActionVector, RewardVector, StagedEnv, StagedTaskSpec, StepOutcome, Transition};
use crate::rng::Rng;

/// Arm reach radius around the shoulder (the base-frame origin), m.
pub const REACH_RADIUS: f64 = 1.0;
const BOX_LO: [f64; 3] = [0.1, -0.3, 0.0];
const BOX_HI: [f64; 3] = [0.9, 0.3, 1.0];
const GRIP_THRESHOLD: f64 = 0.5;
const OBS_DIM: usize = 15;
const N_ACTIONS: usize = 7;

const R_EEFX: usize = 0;
const R_EEFY: usize = 1;
const R_EEFZ1: usize = 2;
const R_ORI: usize = 3;
const R_EEFZ2: usize = 4;
const R_GRIPPER: usize = 5;
const R_BONUS: usize = 6;
const R_REACH: usize = 7;
const R_TABLE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GraspKinematicState {
    /// base frame, shoulder at the origin
    pub eef_pos: [f64; 3],
    /// pitch, roll, yaw relative to the downward pose
    pub eef_tilt: [f64; 3],
    pub gripper_closed: bool,
    /// top of the box, base frame
    pub box_pos: [f64; 3],
    /// hover height above the box top
    pub hover_height: f64,
}

/// Projects a requested end-effector position onto the reach sphere by
/// lowering it: x and y are kept and z is reduced until |p| = L. Returns the
/// position and whether it moved.
pub fn project_to_reach(p: [f64; 3]) -> ([f64; 3], bool) {
    let norm2 = p.iter().map(|v| v * v).sum::<f64>();
    if norm2 <= REACH_RADIUS * REACH_RADIUS {
        return (p, false);
    }
    let planar2 = p[0] * p[0] + p[1] * p[1];
    if planar2 >= REACH_RADIUS * REACH_RADIUS {
        let s = REACH_RADIUS / planar2.sqrt();
        return ([p[0] * s, p[1] * s, 0.0], true);
    }
    let z = (REACH_RADIUS * REACH_RADIUS - planar2).sqrt().copysign(p[2]);
    ([p[0], p[1], z], true)
}

impl GraspKinematicState {
    fn horizontal_error(&self) -> f64 {
        (self.eef_pos[0] - self.box_pos[0]).hypot(self.eef_pos[1] - self.box_pos[1])
    }

    fn tilt_error(&self) -> f64 {
        self.eef_tilt[0].hypot(self.eef_tilt[1])
    }

    fn observation(&self) -> Vec<f64> {
        let [bx, by, bz] = self.box_pos;
        let [ex, ey, ez] = self.eef_pos;
        let [pitch, roll, yaw] = self.eef_tilt;
        let target_z = bz + self.hover_height;
        vec![
            bx,
            by,
            bz,
            ex,
            ey,
            ez,
            target_z,
            pitch,
            roll,
            yaw,
            if self.gripper_closed { 1.0 } else { 0.0 },
            ex - bx,
            ey - by,
            ez - target_z,
            ez - bz,
        ]
    }
}

/// Fixed-base arm grasping a box on a table.
///
/// Actions: `armx, army, armz, armrx, armry, armrz, grip`. The base frame is
/// rotated +90 degrees about the vertical relative to the world frame, so
/// `armx` moves the end effector along world y and `army` along world -x.
/// Stage 1 hovers above the box, stage 2 orients the gripper downward, stage 3
/// lowers onto the box top, stage 4 closes the gripper.
#[derive(Debug, Clone)]
pub struct GraspKinematic {
    config: EnvConfig,
    spec: StagedTaskSpec,
    state: GraspKinematicState,
    rng: Rng,
    steps: usize,
}

impl GraspKinematic {
    pub fn new(config: EnvConfig) -> Self {
        let spec = StagedTaskSpec::new(
            ["armx", "army", "armz", "armrx", "armry", "armrz", "grip"]
                .map(String::from)
                .to_vec(),
            [
                "r_eefx",
                "r_eefy",
                "r_eefz1",
                "r_ori",
                "r_eefz2",
                "r_gripper",
                "r_bonus",
                "r_reach_limit",
                "r_table",
            ]
            .map(String::from)
            .to_vec(),
            vec![
                vec![R_EEFX, R_EEFY, R_EEFZ1, R_GRIPPER],
                vec![R_ORI, R_GRIPPER],
                vec![R_EEFZ2, R_GRIPPER],
                vec![R_GRIPPER],
            ],
            vec![R_BONUS, R_REACH, R_TABLE],
        )
        .expect("static task layout is valid");
        let rng = Rng::seed_from_u64(config.seed);
        let mut env = Self {
            config,
            spec,
            state: GraspKinematicState {
                eef_pos: [0.5, 0.0, 0.7],
                eef_tilt: [0.5, 0.5, 0.0],
                gripper_closed: false,
                box_pos: [0.7, 0.0, 0.25],
                hover_height: 0.12,
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

    pub fn state(&self) -> &GraspKinematicState {
        &self.state
    }

    pub fn set_state(&mut self, state: GraspKinematicState) {
        self.state = state;
        self.steps = 0;
    }

    fn stage_from(&self, horizontal: f64, tilt: f64, z_rel: f64, hover: f64) -> usize {
        let t = &self.config.params.thresholds;
        let h_ok = horizontal <= t.horizontal_tol;
        let ori_ok = tilt <= t.orientation_tol;
        if h_ok && ori_ok && z_rel <= t.lower_tol {
            4
        } else if h_ok && ori_ok && z_rel <= hover + t.hover_tol {
            3
        } else if h_ok && (z_rel - hover).abs() <= t.hover_tol {
            2
        } else {
            1
        }
    }

    fn current_stage(&self) -> usize {
        let s = &self.state;
        self.stage_from(
            s.horizontal_error(),
            s.tilt_error(),
            s.eef_pos[2] - s.box_pos[2],
            s.hover_height,
        )
    }

    fn sample_scene(&mut self) -> ([f64; 3], f64) {
        let b = [
            self.rng.random_range(0.6..0.8),
            self.rng.random_range(-0.1..0.1),
            self.rng.random_range(0.22..0.28),
        ];
        (b, self.rng.random_range(0.10..0.14))
    }

    fn sample_tilt(&mut self, lo: f64, hi: f64) -> [f64; 3] {
        let mag = self.rng.random_range(lo..hi);
        let dir = self.rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        [
            mag * dir.cos(),
            mag * dir.sin(),
            self.rng.random_range(-0.5..0.5),
        ]
    }

    fn near_box(&mut self, b: [f64; 3], z_rel: f64) -> [f64; 3] {
        let r = self.rng.random_range(0.0..0.8 * self.config.params.thresholds.horizontal_tol);
        let a = self.rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        [b[0] + r * a.cos(), b[1] + r * a.sin(), b[2] + z_rel]
    }
}

impl StagedEnv for GraspKinematic {
    fn name(&self) -> &'static str {
        GRASP_KINEMATIC
    }

    fn spec(&self) -> &StagedTaskSpec {
        &self.spec
    }

    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn obs_scale(&self) -> Vec<f64> {
        vec![
            1.0, 0.2, 0.3, 1.0, 0.3, 0.6, 0.4, 0.5, 0.5, 0.5, 1.0, 0.2, 0.2, 0.2, 0.2,
        ]
    }

    fn max_steps(&self) -> usize {
        self.config.params.max_steps
    }

    fn seed(&mut self, seed: u64) {
        self.rng = Rng::seed_from_u64(seed);
    }

    fn reset(&mut self) -> Vec<f64> {
        loop {
            let (b, hover) = self.sample_scene();
            let want = [
                self.rng.random_range(0.7..0.9),
                self.rng.random_range(-0.3..0.3),
                1.0,
            ];
            let (eef, _) = project_to_reach(want);
            let tilt = self.sample_tilt(0.3, 0.8);
            self.state = GraspKinematicState {
                eef_pos: eef,
                eef_tilt: tilt,
                gripper_closed: false,
                box_pos: b,
                hover_height: hover,
            };
            if self.current_stage() == 1 {
                break;
            }
        }
        self.steps = 0;
        self.observe()
    }

    fn reset_to_stage(&mut self, stage: usize) -> Result<Vec<f64>> {
        let t = self.config.params.thresholds.clone();
        let (b, hover) = self.sample_scene();
        let (z_rel, tilt) = match stage {
            1 => return Ok(self.reset()),
            2 => {
                let dz = self.rng.random_range(-0.7 * t.hover_tol..0.7 * t.hover_tol);
                (hover + dz, self.sample_tilt(t.orientation_tol + 0.05, 0.8))
            }
            3 => (
                self.rng.random_range(t.lower_tol + 0.005..hover),
                self.sample_tilt(0.0, 0.8 * t.orientation_tol),
            ),
            4 => (
                self.rng.random_range(0.0..t.lower_tol),
                self.sample_tilt(0.0, 0.8 * t.orientation_tol),
            ),
            _ => {
                return Err(Error::Config(format!(
                    "{GRASP_KINEMATIC} has no stage {stage}"
                )))
            }
        };
        let eef = self.near_box(b, z_rel);
        self.state = GraspKinematicState {
            eef_pos: eef,
            eef_tilt: tilt,
            gripper_closed: false,
            box_pos: b,
            hover_height: hover,
        };
        self.steps = 0;
        let obs = self.observe();
        debug_assert_eq!(self.stage_of(&obs).ok(), Some(stage));
        Ok(obs)
    }

    fn observe(&self) -> Vec<f64> {
        self.state.observation()
    }

    fn stage_of(&self, obs: &[f64]) -> Result<usize> {
        if obs.len() != OBS_DIM {
            return Err(Error::dim("grasp_kinematic observation", OBS_DIM, obs.len()));
        }
        let horizontal = obs[11].hypot(obs[12]);
        let tilt = obs[7].hypot(obs[8]);
        let hover = obs[6] - obs[2];
        Ok(self.stage_from(horizontal, tilt, obs[14], hover))
    }

    fn step(&mut self, action: &ActionVector) -> Result<StepOutcome> {
        if action.len() != N_ACTIONS {
            return Err(Error::dim("grasp_kinematic action", N_ACTIONS, action.len()));
        }
        let p = self.config.params.clone();
        let obs = self.observe();
        let stage = self.current_stage();
        let mut reward = [0.0; 9];

        let s0 = self.state.clone();
        let world_dx0 = (s0.eef_pos[1] - s0.box_pos[1]).abs();
        let world_dy0 = (s0.eef_pos[0] - s0.box_pos[0]).abs();
        let dz1_0 = (s0.eef_pos[2] - s0.box_pos[2] - s0.hover_height).abs();
        let ori0 = s0.tilt_error();
        let dz2_0 = (s0.eef_pos[2] - s0.box_pos[2]).abs();

        let effort = action.as_slice()[..3].iter().fold(0.0f64, |m, a| m.max(a.abs())).min(1.0);
        let noise: [f64; 3] =
            std::array::from_fn(|_| self.rng.sample::<f64, _>(StandardNormal) * p.translate_noise * effort);
        let s = &mut self.state;
        // penalties follow the commanded motion; noise is clamped silently
        let mut want = [0.0; 3];
        let mut clamped = false;
        for i in 0..3 {
            let commanded = s.eef_pos[i] + p.gains.translate * action[i];
            clamped |= !(BOX_LO[i]..=BOX_HI[i]).contains(&commanded);
            want[i] = (commanded + noise[i]).clamp(BOX_LO[i], BOX_HI[i]);
        }
        if clamped {
            reward[R_REACH] = p.bonuses.collision;
        }
        if s.eef_pos[2] + p.gains.translate * action[2] < s.box_pos[2] {
            reward[R_TABLE] = p.bonuses.collision;
        }
        want[2] = want[2].max(s.box_pos[2]);
        let (eef, _) = project_to_reach(want);
        s.eef_pos = eef;
        for i in 0..3 {
            s.eef_tilt[i] = wrap_angle(s.eef_tilt[i] + p.gains.rotate * action[3 + i]);
        }
        s.gripper_closed = action[6] > GRIP_THRESHOLD;

        let lambda = p.lambda;
        let world_dx1 = (s.eef_pos[1] - s.box_pos[1]).abs();
        let world_dy1 = (s.eef_pos[0] - s.box_pos[0]).abs();
        let dz1_1 = (s.eef_pos[2] - s.box_pos[2] - s.hover_height).abs();
        let ori1 = s.tilt_error();
        let dz2_1 = (s.eef_pos[2] - s.box_pos[2]).abs();
        reward[R_EEFX] = lambda * (world_dx0 - world_dx1);
        reward[R_EEFY] = lambda * (world_dy0 - world_dy1);
        reward[R_EEFZ1] = lambda * (dz1_0 - dz1_1);
        reward[R_ORI] = lambda * (ori0 - ori1);
        reward[R_EEFZ2] = lambda * (dz2_0 - dz2_1);

        let mut success = false;
        if s.gripper_closed {
            if stage == 4 {
                reward[R_GRIPPER] = p.bonuses.grasp;
                success = true;
            } else {
                reward[R_GRIPPER] = p.bonuses.premature_close;
            }
        }

        let next_stage = if success { stage } else { self.current_stage() };
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
        let edges: Vec<(&str, &str)> = match stage {
            1 => vec![
                ("army", "r_eefx"),
                ("armx", "r_eefy"),
                ("armz", "r_eefz1"),
                ("armx", "r_eefz1"),
                // moving sideways at the reach limit also lowers the hand
                ("army", "r_eefz1"),
                ("grip", "r_gripper"),
            ],
            2 => vec![
                ("armrx", "r_ori"),
                ("armry", "r_ori"),
                ("grip", "r_gripper"),
            ],
            3 => vec![("armz", "r_eefz2"), ("grip", "r_gripper")],
            _ => vec![("grip", "r_gripper")],
        };
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

    fn env() -> GraspKinematic {
        let mut c = EnvConfig::new(Default::default(), 3);
        c.params.translate_noise = 0.0;
        GraspKinematic::new(c)
    }

    fn act(v: [f64; 7]) -> ActionVector {
        ActionVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn reach_projection_lowers_the_hand() {
        let (p, moved) = project_to_reach([0.9, 0.0, 0.6]);
        assert!(moved);
        assert_eq!(p[0], 0.9);
        assert_eq!(p[1], 0.0);
        assert!((p[2] - 0.19f64.sqrt()).abs() < 1e-12);
        assert!((p[2] - 0.436).abs() < 1e-3);
        let (q, moved) = project_to_reach([0.5, 0.1, 0.5]);
        assert!(!moved);
        assert_eq!(q, [0.5, 0.1, 0.5]);
    }

    #[test]
    fn yaw_only_action_leaves_orientation_reward_zero() {
        let mut e = env();
        e.reset_to_stage(2).unwrap();
        let out = e.step(&act([0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(out.transition.reward[R_ORI], 0.0);
    }

    #[test]
    fn premature_close_is_penalised() {
        let mut e = env();
        e.reset();
        let out = e.step(&act([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(out.transition.stage, 1);
        assert_eq!(out.transition.reward[R_GRIPPER], -0.5);
        assert!(!out.success);
    }

    #[test]
    fn closing_in_stage4_succeeds() {
        let mut e = env();
        e.reset_to_stage(4).unwrap();
        let out = e.step(&act([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(out.success && out.transition.terminal);
        assert_eq!(out.transition.reward[R_GRIPPER], 1.0);
        assert_eq!(out.transition.reward[R_BONUS], 5.0);
    }

    #[test]
    fn axes_are_rotated_between_base_and_world() {
        let mut e = env();
        e.set_state(GraspKinematicState {
            eef_pos: [0.5, 0.1, 0.5],
            eef_tilt: [0.5, 0.0, 0.0],
            gripper_closed: false,
            box_pos: [0.7, 0.0, 0.25],
            hover_height: 0.12,
        });
        let out = e.step(&act([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        let r = &out.transition.reward;
        assert!(r[R_EEFY] > 0.0);
        assert_eq!(r[R_EEFX], 0.0);
        let out = e.step(&act([0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        let r = &out.transition.reward;
        assert!(r[R_EEFX] > 0.0);
        assert_eq!(r[R_EEFY], 0.0);
    }

    #[test]
    fn reset_to_stage_lands_in_stage() {
        let mut e = env();
        for stage in 1..=4 {
            for _ in 0..100 {
                let obs = e.reset_to_stage(stage).unwrap();
                assert_eq!(e.stage_of(&obs).unwrap(), stage);
            }
        }
        let obs = e.reset_to_stage(3).unwrap();
        assert!(obs[11].hypot(obs[12]) <= 0.03);
        assert!(obs[7].hypot(obs[8]) <= 0.1);
        assert!(e.reset_to_stage(5).is_err());
    }

    #[test]
    fn translation_noise_is_seeded_and_never_penalised() {
        let run = || {
            let mut e = GraspKinematic::new(EnvConfig::new(Default::default(), 8));
            e.reset_to_stage(4).unwrap();
            let still: Vec<_> = (0..20)
                .map(|_| e.step(&act([0.0; 7])).unwrap().transition)
                .collect();
            assert!(still.iter().all(|t| t.next_state[3..6] == t.state[3..6]));
            (0..50)
                .map(|i| e.step(&act([0.0, 0.0, if i % 2 == 0 { 0.2 } else { -0.2 }, 0.0, 0.0, 0.0, 0.0])).unwrap().transition)
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().any(|t| t.next_state[3] != t.state[3]));
        assert!(a.chunks(2).any(|w| w[1].next_state[5] != w[0].state[5]));
        assert!(a.iter().all(|t| t.reward[R_TABLE] == 0.0 && t.reward[R_REACH] == 0.0));
        assert!(a.iter().all(|t| t.next_state[14] >= 0.0));
    }

    #[test]
    fn wrong_action_length_is_rejected() {
        let mut e = env();
        let bad = ActionVector::new(vec![0.0; 5]).unwrap();
        assert!(matches!(e.step(&bad), Err(Error::Dimension { .. })));
    }
}
