use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{ActionVector, StagedEnv};
use crate::rng::Rng;

/// Maps (stage, raw observation) to a global action.
pub trait StagePolicy {
    fn act(&mut self, stage: usize, obs: &[f64]) -> Result<ActionVector>;
}

/// Uniform actions in [-1, 1].
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    n_actions: usize,
    rng: Rng,
}

impl RandomPolicy {
    pub fn new(n_actions: usize, seed: u64) -> Self {
        Self {
            n_actions,
            rng: Rng::seed_from_u64(seed),
        }
    }
}

impl StagePolicy for RandomPolicy {
    fn act(&mut self, _stage: usize, _obs: &[f64]) -> Result<ActionVector> {
        use rand::Rng as _;
        ActionVector::new((0..self.n_actions).map(|_| self.rng.random_range(-1.0..=1.0)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    /// fraction of episodes that completed each stage
    pub per_stage_success: Vec<f64>,
    pub overall_success: f64,
    pub mean_return: f64,
    /// mean number of stage decreases per episode
    pub reversals_per_episode: f64,
    /// per stage, per policy dimension
    pub grad_variance: Vec<Vec<f64>>,
}

impl EvalReport {
    pub fn empty(n_stages: usize) -> Self {
        Self {
            episodes: 0,
            per_stage_success: vec![0.0; n_stages],
            overall_success: 0.0,
            mean_return: 0.0,
            reversals_per_episode: 0.0,
            grad_variance: Vec::new(),
        }
    }
}

/// Runs `episodes` full episodes on a copy of `env` seeded with `seed`.
pub fn evaluate(env: &dyn StagedEnv, policy: &mut dyn StagePolicy, episodes: usize, seed: u64) -> Result<EvalReport> {
    let n_stages = env.spec().n_stages;
    if episodes == 0 {
        return Ok(EvalReport::empty(n_stages));
    }
    let mut env = env.box_clone();
    env.seed(seed);
    let mut completed = vec![0usize; n_stages];
    let (mut successes, mut reversals, mut total_return) = (0usize, 0usize, 0.0);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut highest = env.stage_of(&obs)?;
        let mut success = false;
        loop {
            let stage = env.stage_of(&obs)?;
            let action = policy.act(stage, &obs)?;
            let out = env.step(&action)?;
            let t = out.transition;
            total_return += t.reward.sum();
            if t.next_stage < t.stage {
                reversals += 1;
            }
            highest = highest.max(t.next_stage);
            obs = t.next_state;
            if out.success {
                success = true;
            }
            if t.terminal || out.truncated {
                break;
            }
        }
        for (i, c) in completed.iter_mut().enumerate() {
            let stage = i + 1;
            if highest > stage || (stage == n_stages && success) {
                *c += 1;
            }
        }
        successes += usize::from(success);
    }
    let n = episodes as f64;
    Ok(EvalReport {
        episodes,
        per_stage_success: completed.iter().map(|&c| c as f64 / n).collect(),
        overall_success: successes as f64 / n,
        mean_return: total_return / n,
        reversals_per_episode: reversals as f64 / n,
        grad_variance: Vec::new(),
    })
}
