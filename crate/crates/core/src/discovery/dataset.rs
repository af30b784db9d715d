use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionVector, StagedEnv};
use crate::rng::Rng;

/// How the actions of a dataset were drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Regime {
    Random,
    DoZero { action: usize },
    Inference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    /// the stage's own reward terms, penalties excluded
    pub reward: Vec<f64>,
    pub stage: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub state: usize,
    pub action: usize,
    pub reward: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionDataset {
    pub regime: Regime,
    pub stage: usize,
    pub dims: Dims,
    pub rows: Vec<DataRow>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    regime: Regime,
    stage: usize,
    dims: Dims,
}

impl InterventionDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.stage != self.stage {
                return Err(Error::Domain(format!(
                    "row {i} has stage {} in a stage-{} dataset",
                    r.stage, self.stage
                )));
            }
            if r.state.len() != self.dims.state {
                return Err(Error::dim("dataset state", self.dims.state, r.state.len()));
            }
            if r.action.len() != self.dims.action {
                return Err(Error::dim("dataset action", self.dims.action, r.action.len()));
            }
            if r.reward.len() != self.dims.reward {
                return Err(Error::dim("dataset reward", self.dims.reward, r.reward.len()));
            }
            if let Regime::DoZero { action } = self.regime {
                if r.action[action] != 0.0 {
                    return Err(Error::Domain(format!(
                        "row {i} of a do(a_{action}=0) dataset has a nonzero action {action}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// JSON lines: a header object, then one flat array per row
    /// (state, action, reward concatenated).
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            regime: self.regime,
            stage: self.stage,
            dims: self.dims.clone(),
        };
        let io = |e| Error::io(Path::new("<dataset>"), e);
        writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io)?;
        for r in &self.rows {
            let flat: Vec<f64> = r
                .state
                .iter()
                .chain(&r.action)
                .chain(&r.reward)
                .copied()
                .collect();
            writeln!(w, "{}", serde_json::to_string(&flat)?).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let io = |e| Error::io(Path::new("<dataset>"), e);
        let first = lines
            .next()
            .ok_or_else(|| Error::Domain("dataset file is empty".into()))?
            .map_err(io)?;
        let header: Header = serde_json::from_str(&first)?;
        let d = &header.dims;
        let width = d.state + d.action + d.reward;
        let mut rows = Vec::new();
        for line in lines {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let flat: Vec<f64> = serde_json::from_str(&line)?;
            if flat.len() != width {
                return Err(Error::dim("dataset row", width, flat.len()));
            }
            rows.push(DataRow {
                state: flat[..d.state].to_vec(),
                action: flat[d.state..d.state + d.action].to_vec(),
                reward: flat[d.state + d.action..].to_vec(),
                stage: header.stage,
            });
        }
        let ds = Self {
            regime: header.regime,
            stage: header.stage,
            dims: header.dims,
            rows,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}

/// Rolls out uniform random actions in `stage`, pinning one action to zero
/// under [`Regime::DoZero`]. Whenever a step leaves the stage, ends the
/// episode, or the rollout reaches `horizon` steps (0: the env's own limit),
/// the env is put back into `stage`.
pub fn collect(
    env: &mut dyn StagedEnv,
    stage: usize,
    regime: Regime,
    count: usize,
    horizon: usize,
    seed: u64,
) -> Result<InterventionDataset> {
    if count == 0 {
        return Err(Error::Config("collection count must be > 0".into()));
    }
    let k = env.spec().n_actions();
    if let Regime::DoZero { action } = regime {
        if action >= k {
            return Err(Error::Index {
                what: "intervened action",
                index: action,
                max: k,
            });
        }
    }
    let n_terms = env.spec().stage_terms(stage)?.len();
    env.seed(seed);
    let mut rng = Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut obs = env.reset_to_stage(stage)?;
    let mut rows = Vec::with_capacity(count);
    let mut steps = 0;
    while rows.len() < count {
        let mut a: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if let Regime::DoZero { action } = regime {
            a[action] = 0.0;
        }
        let out = env.step(&ActionVector::new(a)?)?;
        let t = out.transition;
        rows.push(DataRow {
            reward: env.spec().slice_stage_terms(&t.reward, stage)?,
            state: t.state,
            action: t.action.as_slice().to_vec(),
            stage,
        });
        steps += 1;
        obs = if t.next_stage != stage || t.terminal || out.truncated || steps == horizon {
            steps = 0;
            env.reset_to_stage(stage)?
        } else {
            t.next_state
        };
    }
    let _ = obs;
    Ok(InterventionDataset {
        regime,
        stage,
        dims: Dims {
            state: env.obs_dim(),
            action: k,
            reward: n_terms,
        },
        rows,
    })
}
