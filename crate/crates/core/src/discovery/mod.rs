//! Intervention-based discovery of per-stage action → reward-term causal
//! matrices.
//!
//! For every stage, random data and `do(a_k = 0)` data are collected, one
//! Gaussian reward model is trained per (action, reward term) pair, and each
//! pair is scored by the mean KL between the model's prediction with the
//! recorded action and with `a_k` zeroed. The per-term KL lists are turned
//! into a binary matrix by [`select_causal_actions`].

mod dataset;
mod reward_model;
mod stats;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use dataset::{collect, DataRow, Dims, InterventionDataset, Regime};
pub use reward_model::{
    kld_for_pair, train_reward_model, KlDirection, ModelSettings, RewardModel, Standardizer,
};
pub use stats::{
    coefficient_of_variation, mean, min_max_normalize, select_causal_actions, std_dev, Branch,
    Selection, SelectionThresholds, StdConvention,
};

use crate::error::{Error, Result};
use crate::matrix::{CausalMatrix, MatrixMeta};
use crate::mdp::StagedEnv;
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlAggregate {
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    /// rows of D_random per stage, and of each D_do
    pub training_count: usize,
    /// defaults to a quarter of `training_count` (a 80/20 split)
    pub inference_count: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub hidden: Vec<usize>,
    /// steps before the collector re-enters the stage; 0 uses the env limit
    pub horizon: usize,
    pub eps_cv: f64,
    pub eps_normalize: f64,
    pub eps_direct: f64,
    pub cv_convention: StdConvention,
    pub kl_direction: KlDirection,
    pub kl_aggregate: KlAggregate,
    /// stages to run; empty means all
    pub stages: Vec<usize>,
    /// 0 means one per available core
    pub workers: usize,
    pub seed: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            training_count: 5000,
            inference_count: None,
            epochs: 100,
            lr: 5e-4,
            batch: 32,
            hidden: vec![128, 128, 128],
            horizon: 20,
            eps_cv: 1.0,
            eps_normalize: 0.1,
            eps_direct: 0.01,
            cv_convention: StdConvention::Sample,
            kl_direction: KlDirection::RandomVsDo,
            kl_aggregate: KlAggregate::Mean,
            stages: Vec::new(),
            workers: 0,
            seed: 0,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.training_count == 0 {
            return Err(Error::Config("discovery.training_count must be > 0".into()));
        }
        if self.inference_count == Some(0) {
            return Err(Error::Config("discovery.inference_count must be > 0".into()));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("discovery.epochs and discovery.batch must be > 0".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("eps_cv", self.eps_cv),
            ("eps_normalize", self.eps_normalize),
            ("eps_direct", self.eps_direct),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("discovery.{name} must be > 0, got {v}")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("discovery.hidden widths must be > 0".into()));
        }
        Ok(())
    }

    pub fn inference_rows(&self) -> usize {
        self.inference_count.unwrap_or((self.training_count / 4).max(1))
    }

    pub fn thresholds(&self) -> SelectionThresholds {
        SelectionThresholds {
            eps_cv: self.eps_cv,
            eps_normalize: self.eps_normalize,
            eps_direct: self.eps_direct,
            cv_convention: self.cv_convention,
        }
    }

    pub fn model_settings(&self) -> ModelSettings {
        ModelSettings {
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            lr: self.lr,
            batch: self.batch,
        }
    }

    fn stage_list(&self, n_stages: usize) -> Result<Vec<usize>> {
        if self.stages.is_empty() {
            return Ok((1..=n_stages).collect());
        }
        for &s in &self.stages {
            if s == 0 || s > n_stages {
                return Err(Error::Config(format!(
                    "discovery.stages lists stage {s}, env has {n_stages}"
                )));
            }
        }
        let mut s = self.stages.clone();
        s.sort_unstable();
        s.dedup();
        Ok(s)
    }
}

/// One reward term's KL list and the selection derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KldRow {
    pub reward: String,
    /// one entry per action, in action order
    pub kld: Vec<f64>,
    pub cv: Option<f64>,
    pub cv_sample: Option<f64>,
    pub cv_population: Option<f64>,
    pub branch: Branch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<Vec<f64>>,
    pub selected: Vec<String>,
    /// final training NLL of each pair's model
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageKld {
    pub stage: usize,
    pub actions: Vec<String>,
    pub thresholds: SelectionThresholds,
    pub rows: Vec<KldRow>,
}

impl KldRow {
    pub fn from_kld(
        reward: &str,
        kld: Vec<f64>,
        losses: Vec<f64>,
        actions: &[String],
        t: &SelectionThresholds,
    ) -> Result<Self> {
        let sel = select_causal_actions(&kld, t)?;
        Ok(Self {
            reward: reward.to_string(),
            cv_sample: coefficient_of_variation(&kld, StdConvention::Sample).ok(),
            cv_population: coefficient_of_variation(&kld, StdConvention::Population).ok(),
            kld,
            cv: sel.cv,
            branch: sel.branch,
            normalized: sel.normalized,
            selected: sel.selected.iter().map(|&k| actions[k].clone()).collect(),
            losses,
        })
    }
}

impl StageKld {
    /// Re-applies the selection rule to the stored KL lists.
    pub fn to_matrix(&self) -> Result<CausalMatrix> {
        let rewards = self.rows.iter().map(|r| r.reward.clone()).collect();
        let mut m = CausalMatrix::zeros(self.stage, self.actions.clone(), rewards);
        for (j, row) in self.rows.iter().enumerate() {
            for k in select_causal_actions(&row.kld, &self.thresholds)?.selected {
                m.set(k, j, true);
            }
        }
        Ok(m)
    }
}

/// Datasets collected for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageData {
    pub random: InterventionDataset,
    pub inference: InterventionDataset,
    pub intervened: Vec<InterventionDataset>,
}

#[derive(Debug, Clone)]
pub struct DiscoveryResult {
    pub matrices: Vec<CausalMatrix>,
    pub tables: Vec<StageKld>,
    pub data: Vec<StageData>,
    /// models per stage, indexed `[j][k]`
    pub models: Vec<Vec<Vec<RewardModel>>>,
}

impl DiscoveryResult {
    /// Names of reward columns that selected no action, per stage.
    pub fn empty_columns(&self) -> Vec<(usize, String)> {
        self.matrices
            .iter()
            .flat_map(|m| {
                m.empty_columns()
                    .into_iter()
                    .map(move |j| (m.stage, m.reward_names[j].clone()))
            })
            .collect()
    }
}

/// Number of (action, reward) models each stage needs.
pub fn job_counts(env: &dyn StagedEnv, config: &DiscoveryConfig) -> Result<Vec<(usize, usize, usize)>> {
    let spec = env.spec();
    config
        .stage_list(spec.n_stages)?
        .into_iter()
        .map(|s| Ok((s, spec.n_actions(), spec.stage_terms(s)?.len())))
        .collect()
}

fn run_jobs<T, F>(n_jobs: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = if workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        workers
    }
    .min(n_jobs.max(1));
    if workers <= 1 {
        return (0..n_jobs).map(&f).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..n_jobs).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                scope.spawn(move || {
                    (w..n_jobs)
                        .step_by(workers)
                        .map(|i| (i, f(i)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("discovery worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every job ran")).collect()
}

/// Runs the full discovery procedure on every configured stage of `env`.
pub fn discover(env: &dyn StagedEnv, config: &DiscoveryConfig) -> Result<DiscoveryResult> {
    config.validate()?;
    let spec = env.spec().clone();
    let stages = config.stage_list(spec.n_stages)?;
    let root = SeedStream::new(config.seed);
    let thresholds = config.thresholds();
    let settings = config.model_settings();
    let actions = spec.action_names.clone();
    let k_count = spec.n_actions();
    let inference_rows = config.inference_rows();

    let mut result = DiscoveryResult {
        matrices: Vec::new(),
        tables: Vec::new(),
        data: Vec::new(),
        models: Vec::new(),
    };
    for stage in stages {
        let seeds = root.child(&format!("stage{stage}"));
        let rewards = spec.names_of(spec.stage_terms(stage)?);
        let j_count = rewards.len();
        log::info!(
            "stage {stage}: collecting data, training {} reward models",
            k_count * j_count
        );
        let mut sim = env.box_clone();
        let random = collect(
            sim.as_mut(),
            stage,
            Regime::Random,
            config.training_count,
            config.horizon,
            seeds.seed("random"),
        )?;
        let inference = collect(
            sim.as_mut(),
            stage,
            Regime::Inference,
            inference_rows,
            config.horizon,
            seeds.seed("inference"),
        )?;
        let intervened = (0..k_count)
            .map(|k| {
                collect(
                    sim.as_mut(),
                    stage,
                    Regime::DoZero { action: k },
                    config.training_count,
                    config.horizon,
                    seeds.seed(&format!("do{k}")),
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let scored = run_jobs(k_count * j_count, config.workers, |i| {
            let (j, k) = (i / k_count, i % k_count);
            let model = train_reward_model(
                (k, j),
                &intervened[k],
                &random,
                &settings,
                seeds.seed(&format!("model{k}_{j}")),
            )?;
            let kl = kld_for_pair(&model, &inference, config.kl_direction)?;
            log::debug!(
                "stage {stage} {} -> {}: kl {kl:.4}, loss {:.4}",
                actions[k],
                rewards[j],
                model.final_loss
            );
            Ok((kl, model))
        })?;

        let mut rows = Vec::with_capacity(j_count);
        let mut models = Vec::with_capacity(j_count);
        let mut scored = scored.into_iter();
        for reward in &rewards {
            let (kld, ms): (Vec<f64>, Vec<RewardModel>) = scored.by_ref().take(k_count).unzip();
            let losses = ms.iter().map(|m| m.final_loss).collect();
            rows.push(KldRow::from_kld(reward, kld, losses, &actions, &thresholds)?);
            models.push(ms);
        }
        let table = StageKld {
            stage,
            actions: actions.clone(),
            thresholds,
            rows,
        };
        let mut m = table.to_matrix()?;
        let empty: Vec<String> = m
            .empty_columns()
            .into_iter()
            .map(|j| m.reward_names[j].clone())
            .collect();
        for name in &empty {
            log::warn!("stage {stage}: no action selected for {name}");
        }
        m.meta = Some(MatrixMeta {
            seed: Some(config.seed),
            counts: BTreeMap::from([
                ("do_zero".to_string(), config.training_count),
                ("inference".to_string(), inference_rows),
                ("random".to_string(), config.training_count),
            ]),
            cv_convention: config.cv_convention.as_str().to_string(),
            kl_direction: config.kl_direction.as_str().to_string(),
            empty_columns: empty,
        });
        result.matrices.push(m);
        result.tables.push(table);
        result.data.push(StageData {
            random,
            inference,
            intervened,
        });
        result.models.push(models);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, EnvConfig, Preset};

    #[test]
    fn config_validation() {
        let mut c = DiscoveryConfig::default();
        c.validate().unwrap();
        assert_eq!(c.inference_rows(), 1250);
        c.training_count = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn job_counts_follow_the_spec() {
        let env = make_env("mobile_reach_2d", EnvConfig::new(Preset::Decoupled, 0)).unwrap();
        let jobs = job_counts(env.as_ref(), &DiscoveryConfig::default()).unwrap();
        assert_eq!(jobs, vec![(1, 5, 1), (2, 5, 1), (3, 5, 3)]);
    }

    #[test]
    fn small_discovery_recovers_stage1_and_is_deterministic() {
        let env = make_env("mobile_reach_2d", EnvConfig::new(Preset::Decoupled, 0)).unwrap();
        let config = DiscoveryConfig {
            training_count: 600,
            epochs: 15,
            lr: 2e-3,
            hidden: vec![32, 32],
            stages: vec![1],
            seed: 4,
            ..Default::default()
        };
        let a = discover(env.as_ref(), &config).unwrap();
        let b = discover(env.as_ref(), &config).unwrap();
        assert_eq!(a.matrices, b.matrices);
        assert_eq!(a.tables, b.tables);
        let truth = env.ground_truth(1).unwrap();
        assert!(a.matrices[0].same_structure(&truth), "{:?}", a.tables[0]);
        assert_eq!(a.tables[0].to_matrix().unwrap().rows(), a.matrices[0].rows());
    }

    #[test]
    fn parallel_jobs_keep_order() {
        let out = run_jobs(7, 3, |i| Ok(i * 10)).unwrap();
        assert_eq!(out, vec![0, 10, 20, 30, 40, 50, 60]);
    }
}
