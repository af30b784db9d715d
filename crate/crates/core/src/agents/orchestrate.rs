use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalReport, StagePolicy};
use super::ppo::{PgMode, PpoAgent, PpoSegment, PpoStep};
use super::sac::{SacAgent, SacSample};
use super::space::CausalActionSpace;
use super::{Algo, GradStats, Losses, TrainConfig};
use crate::error::{Error, Result};
use crate::matrix::CausalMatrix;
use crate::mdp::{ActionVector, StagedEnv};
use crate::nn::{Checkpoint, Mlp};
use crate::rng::{Rng, SeedStream};

/// Per-stage action spaces for `algo`. Causal algorithms need one matrix per
/// stage whose columns are that stage's reward terms; baselines ignore
/// `matrices`.
pub fn build_spaces(env: &dyn StagedEnv, algo: Algo, matrices: Option<&[CausalMatrix]>) -> Result<Vec<CausalActionSpace>> {
    let spec = env.spec();
    if !algo.uses_matrices() {
        return Ok((1..=spec.n_stages)
            .map(|s| CausalActionSpace::full(s, &spec.action_names))
            .collect());
    }
    let ms = matrices.ok_or_else(|| Error::Config(format!("algo {algo} needs causal matrices")))?;
    if ms.len() != spec.n_stages {
        return Err(Error::Config(format!(
            "{} matrices given for a {}-stage task",
            ms.len(),
            spec.n_stages
        )));
    }
    let penalties = spec.penalty_names();
    ms.iter()
        .enumerate()
        .map(|(i, m)| {
            let stage = i + 1;
            let cols = spec.names_of(spec.stage_terms(stage)?);
            if m.stage != stage || m.action_names != spec.action_names || m.reward_names != cols {
                return Err(Error::Config(format!(
                    "matrix {i} does not match stage {stage} of {} (expected rewards {cols:?})",
                    env.name()
                )));
            }
            CausalActionSpace::from_matrix(m, &penalties)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageAgent {
    Ppo(PpoAgent),
    Sac(SacAgent),
}

impl StageAgent {
    pub fn space(&self) -> &CausalActionSpace {
        match self {
            StageAgent::Ppo(a) => &a.space,
            StageAgent::Sac(a) => &a.space,
        }
    }

    pub fn stats(&self) -> &GradStats {
        match self {
            StageAgent::Ppo(a) => &a.stats,
            StageAgent::Sac(a) => &a.stats,
        }
    }

    /// Deterministic policy for evaluation.
    pub fn policy_checkpoint(&self) -> PolicyCheckpoint {
        match self {
            StageAgent::Ppo(a) => PolicyCheckpoint {
                space: a.space.clone(),
                squash: false,
                policy: Checkpoint::from_net(&a.policy),
            },
            StageAgent::Sac(a) => PolicyCheckpoint {
                space: a.space.clone(),
                squash: true,
                policy: Checkpoint::from_net(&a.actor),
            },
        }
    }
}

/// A stage policy network with its action-space descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub space: CausalActionSpace,
    /// actions pass through tanh
    pub squash: bool,
    pub policy: Checkpoint,
}

/// Mean-action policies of every stage.
#[derive(Debug, Clone)]
pub struct AgentSet {
    spaces: Vec<CausalActionSpace>,
    nets: Vec<Mlp>,
    squash: Vec<bool>,
    scale: Vec<f64>,
}

impl AgentSet {
    pub fn new(policies: Vec<PolicyCheckpoint>, obs_scale: Vec<f64>) -> Result<Self> {
        let mut set = Self {
            spaces: Vec::new(),
            nets: Vec::new(),
            squash: Vec::new(),
            scale: obs_scale,
        };
        for (i, p) in policies.into_iter().enumerate() {
            if p.space.stage != i + 1 {
                return Err(Error::Config(format!("policy {i} is for stage {}", p.space.stage)));
            }
            let net = p.policy.into_net()?;
            if net.input_dim() != set.scale.len() || net.output_dim() != 2 * p.space.dim() {
                return Err(Error::Config(format!("stage {} policy shape does not match its space", i + 1)));
            }
            set.nets.push(net);
            set.squash.push(p.squash);
            set.spaces.push(p.space);
        }
        Ok(set)
    }

    pub fn n_stages(&self) -> usize {
        self.spaces.len()
    }

    pub fn save_dir(policies: &[PolicyCheckpoint], dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for p in policies {
            let path = dir.join(format!("stage{}.json", p.space.stage));
            let text = serde_json::to_string(p)?;
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path, n_stages: usize) -> Result<Vec<PolicyCheckpoint>> {
        (1..=n_stages)
            .map(|s| {
                let path = dir.join(format!("stage{s}.json"));
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                Ok(serde_json::from_str(&text)?)
            })
            .collect()
    }
}

fn scaled(obs: &[f64], scale: &[f64]) -> Vec<f64> {
    obs.iter().zip(scale).map(|(o, s)| o / s).collect()
}

impl StagePolicy for AgentSet {
    fn act(&mut self, stage: usize, obs: &[f64]) -> Result<ActionVector> {
        let i = stage
            .checked_sub(1)
            .filter(|&i| i < self.spaces.len())
            .ok_or(Error::Index {
                what: "stage",
                index: stage,
                max: self.spaces.len(),
            })?;
        let out = self.nets[i].forward_one(&scaled(obs, &self.scale))?;
        let dim = self.spaces[i].dim();
        let local: Vec<f64> = out[..dim]
            .iter()
            .map(|&m| if self.squash[i] { m.tanh() } else { m })
            .collect();
        self.spaces[i].embed(&local)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub algo: Algo,
    pub per_stage_success: Vec<f64>,
    pub overall_success: f64,
    pub mean_return: f64,
    pub reversals_per_episode: f64,
    pub losses: BTreeMap<String, f64>,
    pub grad_variance: Vec<Vec<f64>>,
}

/// Resumable counters and random state of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub step: usize,
    pub episodes: usize,
    pub since_update: usize,
    pub rng: Rng,
    pub last_losses: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct TrainerCheckpoint {
    config: TrainConfig,
    state: TrainerState,
    agents: Vec<StageAgent>,
}

/// Runs the environment, dispatching every step to the agent of the current
/// stage and updating agents from their own stage's data only.
pub struct Trainer {
    env: Box<dyn StagedEnv>,
    pub config: TrainConfig,
    pub agents: Vec<StageAgent>,
    pub state: TrainerState,
    scale: Vec<f64>,
    obs: Vec<f64>,
    open: Option<PpoSegment>,
}

impl Trainer {
    pub fn new(env: &dyn StagedEnv, matrices: Option<&[CausalMatrix]>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let seeds = SeedStream::new(config.seed);
        let spaces = build_spaces(env, config.algo, matrices)?;
        let mut init = seeds.rng("policy-init");
        let obs_dim = env.obs_dim();
        let agents = spaces
            .into_iter()
            .map(|space| {
                Ok(match config.algo {
                    Algo::Cmppo => StageAgent::Ppo(PpoAgent::new(space, PgMode::Causal, obs_dim, config.ppo.clone(), config.gamma, &mut init)?),
                    Algo::Mppo => StageAgent::Ppo(PpoAgent::new(space, PgMode::Joint, obs_dim, config.ppo.clone(), config.gamma, &mut init)?),
                    _ => StageAgent::Sac(SacAgent::new(space, obs_dim, config.sac.clone(), config.gamma, &mut init)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let state = TrainerState {
            step: 0,
            episodes: 0,
            since_update: 0,
            rng: seeds.rng("train"),
            last_losses: BTreeMap::new(),
        };
        Ok(Self::assemble(env, config, agents, state))
    }

    fn assemble(env: &dyn StagedEnv, config: TrainConfig, agents: Vec<StageAgent>, state: TrainerState) -> Self {
        let mut env = env.box_clone();
        let seeds = SeedStream::new(config.seed).child("env");
        env.seed(seeds.seed(&format!("from{}", state.step)));
        let obs = env.reset();
        Self {
            scale: env.obs_scale(),
            env,
            config,
            agents,
            state,
            obs,
            open: None,
        }
    }

    pub fn step(&self) -> usize {
        self.state.step
    }

    pub fn policies(&self) -> Vec<PolicyCheckpoint> {
        self.agents.iter().map(StageAgent::policy_checkpoint).collect()
    }

    pub fn agent_set(&self) -> Result<AgentSet> {
        AgentSet::new(self.policies(), self.scale.clone())
    }

    /// Writes everything needed to continue the run. Data of the subtask
    /// episode in progress is dropped; the environment restarts on resume.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = TrainerCheckpoint {
            config: self.config.clone(),
            state: self.state.clone(),
            agents: self.agents.clone(),
        };
        let text = serde_json::to_string(&ck)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn resume(env: &dyn StagedEnv, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: TrainerCheckpoint = serde_json::from_str(&text)?;
        ck.config.validate()?;
        if ck.agents.len() != env.spec().n_stages {
            return Err(Error::Config(format!(
                "checkpoint has {} agents for a {}-stage task",
                ck.agents.len(),
                env.spec().n_stages
            )));
        }
        Ok(Self::assemble(env, ck.config, ck.agents, ck.state))
    }

    /// One environment step, plus any updates it triggers.
    pub fn step_once(&mut self) -> Result<()> {
        let spec = self.env.spec().clone();
        let stage = self.env.stage_of(&self.obs)?;
        let x = scaled(&self.obs, &self.scale);
        let agent = &mut self.agents[stage - 1];
        let rng = &mut self.state.rng;
        let (local, logp) = match agent {
            StageAgent::Ppo(a) => {
                let (l, lp) = a.act(&x, rng)?;
                (l, Some(lp))
            }
            StageAgent::Sac(a) => (a.act(&x, rng)?, None),
        };
        let global = agent.space().embed(&local)?;
        let out = self.env.step(&global)?;
        let t = out.transition;
        let cols = agent.space().columns(&spec.slice_reward(&t.reward, stage)?)?;
        let next_x = scaled(&t.next_state, &self.scale);
        let changed = t.next_stage != stage;
        let ended = t.terminal || out.truncated;
        match agent {
            StageAgent::Ppo(a) => {
                let seg = self.open.get_or_insert_with(|| PpoSegment {
                    steps: Vec::new(),
                    bootstrap_obs: None,
                });
                seg.steps.push(PpoStep {
                    obs: x,
                    action: local,
                    logp: logp.unwrap_or_default(),
                    reward: cols,
                });
                if changed || ended {
                    let mut seg = self.open.take().expect("segment just opened");
                    if !changed && !t.terminal {
                        seg.bootstrap_obs = Some(next_x.clone());
                    }
                    a.push_segment(seg);
                }
            }
            StageAgent::Sac(a) => {
                a.push(SacSample {
                    obs: x,
                    action: local,
                    reward: cols,
                    next_obs: next_x.clone(),
                    done: t.terminal || changed,
                });
                if a.ready() {
                    if let Some(l) = a.train(&mut self.state.rng)? {
                        record(&mut self.state.last_losses, stage, l);
                    }
                }
            }
        }
        self.state.step += 1;
        self.state.since_update += 1;
        if self.config.algo.is_on_policy() && self.state.since_update >= self.config.ppo.n_step {
            if let Some(mut seg) = self.open.take() {
                seg.bootstrap_obs = Some(next_x);
                if let StageAgent::Ppo(a) = &mut self.agents[stage - 1] {
                    a.push_segment(seg);
                }
            }
            for (i, agent) in self.agents.iter_mut().enumerate() {
                if let StageAgent::Ppo(a) = agent {
                    if a.buffered() == 0 {
                        continue;
                    }
                    if let Some(l) = a.update(&mut self.state.rng)? {
                        record(&mut self.state.last_losses, i + 1, l);
                    }
                }
            }
            self.state.since_update = 0;
        }
        if ended {
            self.state.episodes += 1;
            self.open = None;
            self.obs = self.env.reset();
        } else {
            self.obs = t.next_state;
        }
        Ok(())
    }

    /// Deterministic evaluation of the current policies.
    pub fn evaluate(&self) -> Result<MetricsRecord> {
        let mut set = self.agent_set()?;
        let seed = SeedStream::new(self.config.seed).seed("eval");
        let report = evaluate(self.env.as_ref(), &mut set, self.config.eval_episodes, seed)?;
        Ok(self.record(report))
    }

    fn record(&self, r: EvalReport) -> MetricsRecord {
        MetricsRecord {
            step: self.state.step,
            algo: self.config.algo,
            per_stage_success: r.per_stage_success,
            overall_success: r.overall_success,
            mean_return: r.mean_return,
            reversals_per_episode: r.reversals_per_episode,
            losses: self.state.last_losses.clone(),
            grad_variance: self.agents.iter().map(|a| a.stats().variance.clone()).collect(),
        }
    }

    /// Trains up to `total_steps`, evaluating every `eval_every` steps and at
    /// the end. `on_eval` sees each record together with the trainer.
    pub fn run<F>(&mut self, mut on_eval: F) -> Result<Vec<MetricsRecord>>
    where
        F: FnMut(&MetricsRecord, &Trainer) -> Result<()>,
    {
        let mut records = Vec::new();
        let every = self.config.eval_every;
        while self.state.step < self.config.total_steps {
            self.step_once()?;
            let at_eval = every > 0 && self.state.step % every == 0;
            if at_eval || self.state.step == self.config.total_steps {
                let rec = self.evaluate()?;
                on_eval(&rec, self)?;
                records.push(rec);
            }
        }
        Ok(records)
    }
}

fn record(map: &mut BTreeMap<String, f64>, stage: usize, l: Losses) {
    map.insert(format!("stage{stage}.policy"), l.policy);
    map.insert(format!("stage{stage}.critic"), l.critic);
    if let Some(a) = l.alpha {
        map.insert(format!("stage{stage}.alpha"), a);
    }
}
