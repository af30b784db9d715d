//! Single-file run configuration with every default materialized.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{Algo, TrainConfig};
use crate::discovery::DiscoveryConfig;
use crate::envs::{make_env, EnvConfig, EnvParams, Preset};
use crate::error::{Error, Result};
use crate::mdp::StagedEnv;
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub name: String,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default)]
    pub overrides: EnvParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    /// causal matrices for cm* training and replays
    pub matrix_path: Option<PathBuf>,
    /// also write the discovery datasets
    pub save_datasets: bool,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            matrix_path: None,
            save_datasets: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSection,
    #[serde(default)]
    pub discovery: DiscoveryConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub io: IoConfig,
    /// root seeds; commands run on the first unless one is given explicitly
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.env_config(0).validate()?;
        self.discovery.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        make_env(&self.env.name, self.env_config(0)).map(|_| ())
    }

    pub fn env_config(&self, seed: u64) -> EnvConfig {
        EnvConfig {
            preset: self.env.preset,
            params: self.env.overrides.clone(),
            seed,
        }
    }

    /// Copy with every seed derived from `root`: the snapshot written next
    /// to results, which re-runs identically.
    pub fn resolved(&self, root: u64) -> Self {
        let s = SeedStream::new(root);
        let mut c = self.clone();
        c.seeds = vec![root];
        c.discovery.seed = s.seed("discovery");
        c.train.seed = s.seed("train");
        c
    }

    /// Environment of a resolved config.
    pub fn make_env(&self) -> Result<Box<dyn StagedEnv>> {
        let root = self.seeds.first().copied().unwrap_or(0);
        make_env(&self.env.name, self.env_config(SeedStream::new(root).seed("env")))
    }

    /// Rejects algorithm and input combinations that cannot run.
    pub fn check_training_inputs(&self, algo: Algo, have_matrices: bool) -> Result<()> {
        if algo.uses_matrices() && !have_matrices {
            return Err(Error::Config(format!(
                "algo {algo} needs causal matrices (--matrices or io.matrix_path)"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_materializes_defaults() {
        let c = RunConfig::from_toml("[env]\nname = \"mobile_reach_2d\"\n").unwrap();
        assert_eq!(c.discovery, DiscoveryConfig::default());
        assert_eq!(c.seeds, vec![0]);
        let text = c.to_toml().unwrap();
        assert!(text.contains("training_count = 5000"), "{text}");
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn missing_and_unknown_fields_are_named() {
        let e = RunConfig::from_toml("[env]\npreset = \"coupled\"\n").unwrap_err().to_string();
        assert!(e.contains("name"), "{e}");
        let e = RunConfig::from_toml("[env]\nname = \"grasp_kinematic\"\n[train]\nalgo = \"cmsac\"\nbogus = 1\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("bogus") && e.contains("line"), "{e}");
        let e = RunConfig::from_toml("[env]\nname = \"cartpole\"\n").unwrap_err().to_string();
        assert!(e.contains("cartpole"), "{e}");
    }

    #[test]
    fn resolved_seeds_are_stable() {
        let c = RunConfig::from_toml("seeds = [4, 5]\n[env]\nname = \"grasp_kinematic\"\n").unwrap();
        let r = c.resolved(5);
        assert_eq!(r.seeds, vec![5]);
        assert_eq!(r, c.resolved(5));
        assert_ne!(r.discovery.seed, c.resolved(4).discovery.seed);
        assert_eq!(r.resolved(5), r);
    }
}
