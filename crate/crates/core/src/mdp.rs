//! Multi-reward MDPs with stage dispatch.
//!
//! A staged task exposes K action dimensions and M reward terms. The current
//! stage is a deterministic function of the observation, and each stage owns
//! a subset of the reward terms. A maximal run of steps spent in one stage is
//! a subtask episode; it ends on any stage change.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::CausalMatrix;

/// Names and stage grouping of the actions and reward terms of a task.
///
/// Stages are numbered from 1. `stage_rewards[i]` holds the reward indices of
/// stage `i + 1`. A reward index may be listed in several stages (a term that
/// is live throughout the task, such as a gripper reward); penalty terms are
/// never listed in a stage and are excluded from discovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedTaskSpec {
    pub n_stages: usize,
    pub action_names: Vec<String>,
    pub reward_names: Vec<String>,
    pub stage_rewards: Vec<Vec<usize>>,
    pub penalty_rewards: Vec<usize>,
}

impl StagedTaskSpec {
    pub fn new(
        action_names: Vec<String>,
        reward_names: Vec<String>,
        stage_rewards: Vec<Vec<usize>>,
        penalty_rewards: Vec<usize>,
    ) -> Result<Self> {
        let spec = Self {
            n_stages: stage_rewards.len(),
            action_names,
            reward_names,
            stage_rewards,
            penalty_rewards,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.reward_names.len();
        if self.n_stages == 0 || self.n_stages != self.stage_rewards.len() {
            return Err(Error::Config(format!(
                "n_stages {} does not match {} stage reward groups",
                self.n_stages,
                self.stage_rewards.len()
            )));
        }
        if self.action_names.is_empty() {
            return Err(Error::Config("task has no actions".into()));
        }
        let mut covered = vec![false; m];
        for (i, group) in self.stage_rewards.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::Config(format!("stage {} has no reward terms", i + 1)));
            }
            for (pos, &j) in group.iter().enumerate() {
                if j >= m {
                    return Err(Error::Config(format!("reward index {j} out of range")));
                }
                if group[..pos].contains(&j) {
                    return Err(Error::Config(format!(
                        "reward {} listed twice in stage {}",
                        self.reward_names[j],
                        i + 1
                    )));
                }
                if self.penalty_rewards.contains(&j) {
                    return Err(Error::Config(format!(
                        "penalty reward {} also listed in stage {}",
                        self.reward_names[j],
                        i + 1
                    )));
                }
                covered[j] = true;
            }
        }
        for &p in &self.penalty_rewards {
            if p >= m {
                return Err(Error::Config(format!("penalty index {p} out of range")));
            }
            covered[p] = true;
        }
        if let Some(j) = covered.iter().position(|c| !c) {
            return Err(Error::Config(format!(
                "reward {} belongs to no stage and is not a penalty",
                self.reward_names[j]
            )));
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn n_rewards(&self) -> usize {
        self.reward_names.len()
    }

    fn check_stage(&self, stage: usize) -> Result<()> {
        if stage == 0 || stage > self.n_stages {
            return Err(Error::Index {
                what: "stage",
                index: stage,
                max: self.n_stages,
            });
        }
        Ok(())
    }

    /// Reward indices that take part in discovery for `stage`.
    pub fn stage_terms(&self, stage: usize) -> Result<&[usize]> {
        self.check_stage(stage)?;
        Ok(&self.stage_rewards[stage - 1])
    }

    /// Stage terms followed by the penalty terms: the columns a stage's agent trains on.
    pub fn training_columns(&self, stage: usize) -> Result<Vec<usize>> {
        let mut cols = self.stage_terms(stage)?.to_vec();
        cols.extend_from_slice(&self.penalty_rewards);
        Ok(cols)
    }

    pub fn names_of(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .map(|&j| self.reward_names[j].clone())
            .collect()
    }

    pub fn penalty_names(&self) -> Vec<String> {
        self.names_of(&self.penalty_rewards)
    }

    /// Components of `reward` for `stage`: its own terms then the penalty terms.
    pub fn slice_reward(&self, reward: &RewardVector, stage: usize) -> Result<Vec<f64>> {
        if reward.len() != self.n_rewards() {
            return Err(Error::dim("reward vector", self.n_rewards(), reward.len()));
        }
        Ok(self
            .training_columns(stage)?
            .into_iter()
            .map(|j| reward.0[j])
            .collect())
    }

    /// Discovery terms only (no penalties).
    pub fn slice_stage_terms(&self, reward: &RewardVector, stage: usize) -> Result<Vec<f64>> {
        if reward.len() != self.n_rewards() {
            return Err(Error::dim("reward vector", self.n_rewards(), reward.len()));
        }
        Ok(self
            .stage_terms(stage)?
            .iter()
            .map(|&j| reward.0[j])
            .collect())
    }
}

/// K controller commands, each clamped to [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionVector(Vec<f64>);

impl ActionVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite action component {v}")));
        }
        Ok(Self(values.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect()))
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for ActionVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// One value per reward term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardVector(Vec<f64>);

impl RewardVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite reward component {v}")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl std::ops::Index<usize> for RewardVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: ActionVector,
    pub reward: RewardVector,
    pub next_state: Vec<f64>,
    pub stage: usize,
    pub next_stage: usize,
    pub terminal: bool,
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub transition: Transition,
    /// The task was completed on this step (implies `transition.terminal`).
    pub success: bool,
    /// The step limit was reached without a terminal event.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskExit {
    Advanced,
    Regressed,
    Terminal,
    Truncated,
}

impl SubtaskExit {
    /// Whether the value after this exit is bootstrapped.
    pub fn bootstraps(self) -> bool {
        matches!(self, SubtaskExit::Truncated)
    }
}

/// How a subtask episode ends after `last`. `Truncated` is returned when the
/// stage is unchanged and the step was not terminal.
pub fn exit_of(last: &Transition) -> SubtaskExit {
    use std::cmp::Ordering;
    match last.next_stage.cmp(&last.stage) {
        Ordering::Greater => SubtaskExit::Advanced,
        Ordering::Less => SubtaskExit::Regressed,
        Ordering::Equal if last.terminal => SubtaskExit::Terminal,
        Ordering::Equal => SubtaskExit::Truncated,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubtaskEpisode {
    pub stage: usize,
    pub transitions: Vec<Transition>,
    pub exit: SubtaskExit,
}

impl SubtaskEpisode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Splits one environment episode into subtask episodes at every stage change.
pub fn segment_episode(trajectory: &[Transition]) -> Vec<SubtaskEpisode> {
    let mut out = Vec::new();
    let mut start = 0;
    for t in 0..trajectory.len() {
        let tr = &trajectory[t];
        let boundary = t + 1 == trajectory.len()
            || tr.next_stage != tr.stage
            || trajectory[t + 1].stage != tr.stage;
        if boundary {
            out.push(SubtaskEpisode {
                stage: tr.stage,
                transitions: trajectory[start..=t].to_vec(),
                exit: exit_of(tr),
            });
            start = t + 1;
        }
    }
    out
}

/// Scaled one-step reduction of a distance to a goal.
pub fn progress_reward(prev_dist: f64, cur_dist: f64, lambda: f64) -> Result<f64> {
    if prev_dist < 0.0 || cur_dist < 0.0 {
        return Err(Error::Domain(format!(
            "distances must be non-negative, got {prev_dist} and {cur_dist}"
        )));
    }
    if lambda <= 0.0 {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    Ok(lambda * (prev_dist - cur_dist))
}

/// An environment whose current stage is a deterministic function of the observation.
pub trait StagedEnv: Send {
    fn name(&self) -> &'static str;
    fn spec(&self) -> &StagedTaskSpec;
    fn obs_dim(&self) -> usize;
    /// Nominal magnitude of each observation component, for input scaling.
    fn obs_scale(&self) -> Vec<f64>;
    fn max_steps(&self) -> usize;
    fn seed(&mut self, seed: u64);
    /// Generic episode start (stage 1 region).
    fn reset(&mut self) -> Vec<f64>;
    /// Starts in a state whose stage is `stage`.
    fn reset_to_stage(&mut self, stage: usize) -> Result<Vec<f64>>;
    fn observe(&self) -> Vec<f64>;
    fn stage_of(&self, obs: &[f64]) -> Result<usize>;
    fn step(&mut self, action: &ActionVector) -> Result<StepOutcome>;
    fn ground_truth(&self, stage: usize) -> Result<CausalMatrix>;
    fn box_clone(&self) -> Box<dyn StagedEnv>;
}

#[derive(Serialize, Deserialize)]
struct TransitionRecord {
    state: Vec<f64>,
    action: Vec<f64>,
    reward: Vec<f64>,
    stage: usize,
    next_stage: usize,
    terminal: bool,
}

/// Writes one transition per line (`state, action, reward, stage, next_stage, terminal`).
pub fn write_trajectory<W: Write>(mut w: W, trajectory: &[Transition]) -> Result<()> {
    for t in trajectory {
        let rec = TransitionRecord {
            state: t.state.clone(),
            action: t.action.as_slice().to_vec(),
            reward: t.reward.as_slice().to_vec(),
            stage: t.stage,
            next_stage: t.next_stage,
            terminal: t.terminal,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io("<trajectory>", e))?;
    }
    Ok(())
}

/// Reads a trajectory dump. `next_state` is not stored in the dump and is
/// rebuilt from the following line's state (left empty on the last line).
pub fn read_trajectory<R: BufRead>(r: R) -> Result<Vec<Transition>> {
    let mut out: Vec<Transition> = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<trajectory>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TransitionRecord = serde_json::from_str(&line)?;
        if let Some(prev) = out.last_mut() {
            prev.next_state = rec.state.clone();
        }
        out.push(Transition {
            state: rec.state,
            action: ActionVector::new(rec.action)?,
            reward: RewardVector::new(rec.reward)?,
            next_state: Vec::new(),
            stage: rec.stage,
            next_stage: rec.next_stage,
            terminal: rec.terminal,
        });
    }
    Ok(out)
}

pub fn save_trajectory(path: &Path, trajectory: &[Transition]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_trajectory(&mut w, trajectory)?;
    w.flush().map_err(|e| Error::io(path, e))
}
