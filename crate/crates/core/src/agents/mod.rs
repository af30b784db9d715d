//! Per-stage agents whose action spaces and policy gradients are restricted
//! by a causal matrix, the baselines that ignore it, and the training loop
//! that dispatches every step to the agent of the current stage.

pub mod advantage;
mod eval;
mod orchestrate;
pub mod policy;
mod ppo;
mod sac;
pub mod scripted;
mod space;

pub use advantage::{factored_gae, standardize_columns};
pub use eval::{evaluate, EvalReport, RandomPolicy, StagePolicy};
pub use orchestrate::{build_spaces, AgentSet, MetricsRecord, PolicyCheckpoint, StageAgent, Trainer, TrainerState};
pub use scripted::scripted_policy;
pub use ppo::{ppo_policy_grad, value_loss_grad, PgMode, PpoAgent, PpoSegment, PpoStep};
pub use sac::{critic_loss_grad, sac_actor_grad, squashed_sample, ReplayBuffer, SacAgent, SacSample};
pub use space::{causal_actions, causal_pg_weights, CausalActionSpace, SUMMED_REWARD};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Cmppo,
    Mppo,
    Cmsac,
    Msac,
    Cmmsac,
}

impl Algo {
    pub const ALL: [Algo; 5] = [Algo::Cmppo, Algo::Mppo, Algo::Cmsac, Algo::Msac, Algo::Cmmsac];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Cmppo => "cmppo",
            Algo::Mppo => "mppo",
            Algo::Cmsac => "cmsac",
            Algo::Msac => "msac",
            Algo::Cmmsac => "cmmsac",
        }
    }

    pub fn is_on_policy(self) -> bool {
        matches!(self, Algo::Cmppo | Algo::Mppo)
    }

    /// Whether the algorithm trains on a causal matrix (discovered or manual).
    pub fn uses_matrices(self) -> bool {
        !matches!(self, Algo::Mppo | Algo::Msac)
    }
}

impl std::str::FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown algo '{s}' (cmppo, mppo, cmsac, msac, cmmsac)")))
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub clip: f64,
    /// environment steps between updates
    pub n_step: usize,
    pub batch: usize,
    pub opt_epochs: usize,
    pub gae_lambda: f64,
    pub max_grad_norm: f64,
    pub ent_coef: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            lr: 5e-5,
            clip: 0.2,
            n_step: 10_000,
            batch: 64,
            opt_epochs: 10,
            gae_lambda: 0.95,
            max_grad_norm: 0.5,
            ent_coef: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// replay capacity per stage
    pub buffer: usize,
    /// new samples that trigger a round of updates
    pub train_trigger: usize,
    pub batch: usize,
    pub tau: f64,
    /// gradient steps per trigger; `None` means one per new sample
    pub updates_per_trigger: Option<usize>,
    pub init_alpha: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 512],
            lr: 5e-4,
            buffer: 10_000,
            train_trigger: 1000,
            batch: 512,
            tau: 0.005,
            updates_per_trigger: None,
            init_alpha: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algo: Algo,
    pub gamma: f64,
    pub ppo: PpoConfig,
    pub sac: SacConfig,
    pub total_steps: usize,
    /// 0 disables periodic evaluation
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Cmppo,
            gamma: 0.99,
            ppo: PpoConfig::default(),
            sac: SacConfig::default(),
            total_steps: 300_000,
            eval_every: 10_000,
            eval_episodes: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, v: String| Err(Error::Config(format!("train.{f} is invalid: {v}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", self.gamma.to_string());
        }
        if self.total_steps == 0 {
            return bad("total_steps", "must be > 0".into());
        }
        let p = &self.ppo;
        let s = &self.sac;
        let positive = [
            ("ppo.lr", p.lr),
            ("ppo.clip", p.clip),
            ("ppo.max_grad_norm", p.max_grad_norm),
            ("sac.lr", s.lr),
            ("sac.init_alpha", s.init_alpha),
        ];
        for (f, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(f, v.to_string());
            }
        }
        let counts = [
            ("ppo.n_step", p.n_step),
            ("ppo.batch", p.batch),
            ("ppo.opt_epochs", p.opt_epochs),
            ("sac.buffer", s.buffer),
            ("sac.train_trigger", s.train_trigger),
            ("sac.batch", s.batch),
        ];
        for (f, v) in counts {
            if v == 0 {
                return bad(f, "must be > 0".into());
            }
        }
        if p.hidden.contains(&0) || s.hidden.contains(&0) {
            return bad("hidden", "layer widths must be > 0".into());
        }
        if !(0.0..=1.0).contains(&p.gae_lambda) {
            return bad("ppo.gae_lambda", p.gae_lambda.to_string());
        }
        if !(0.0..=1.0).contains(&s.tau) {
            return bad("sac.tau", s.tau.to_string());
        }
        if s.batch > s.buffer {
            return bad("sac.batch", format!("{} exceeds buffer {}", s.batch, s.buffer));
        }
        if p.ent_coef < 0.0 {
            return bad("ppo.ent_coef", p.ent_coef.to_string());
        }
        Ok(())
    }
}

/// Mean losses of one update round.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub policy: f64,
    pub critic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

/// Empirical variance of each policy dimension's gradient weight over the
/// last update.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GradStats {
    pub variance: Vec<f64>,
}

impl GradStats {
    /// `weights` is row-major `rows x dim`.
    pub fn from_weights(weights: &[f64], dim: usize) -> Self {
        if dim == 0 || weights.len() < dim {
            return Self { variance: vec![0.0; dim] };
        }
        let rows = weights.len() / dim;
        let variance = (0..dim)
            .map(|k| {
                let col: Vec<f64> = (0..rows).map(|r| weights[r * dim + k]).collect();
                let sd = crate::discovery::std_dev(&col, crate::discovery::StdConvention::Population);
                sd * sd
            })
            .collect();
        Self { variance }
    }
}
