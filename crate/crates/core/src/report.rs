//! Cross-run comparison: mean and sample-std success curves per algorithm.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{Algo, MetricsRecord};
use crate::discovery::{mean, std_dev, StdConvention};
use crate::error::{Error, Result};

/// Success level used for `steps_to_threshold`.
pub const SUCCESS_THRESHOLD: f64 = 0.5;

/// Metrics of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub label: String,
    /// environment identity; runs being compared must agree
    pub env: String,
    pub algo: Algo,
    pub records: Vec<MetricsRecord>,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub algo: Algo,
    pub runs: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoSummary {
    pub runs: usize,
    pub final_success: f64,
    pub final_success_std: f64,
    /// first aligned step whose mean success reaches the threshold
    pub steps_to_threshold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub steps: Vec<usize>,
    pub curves: Vec<Curve>,
}

/// Groups runs by algorithm and aligns them on the steps every run recorded.
pub fn compare(runs: &[RunMetrics]) -> Result<Comparison> {
    if runs.len() < 2 {
        return Err(Error::Config(format!("compare needs at least 2 runs, got {}", runs.len())));
    }
    if let Some(r) = runs.iter().find(|r| r.env != runs[0].env) {
        return Err(Error::Config(format!(
            "run {} is on {} but {} is on {}",
            r.label, r.env, runs[0].label, runs[0].env
        )));
    }
    let mut steps: BTreeSet<usize> = runs[0].records.iter().map(|m| m.step).collect();
    for r in &runs[1..] {
        let s: BTreeSet<usize> = r.records.iter().map(|m| m.step).collect();
        steps = steps.intersection(&s).copied().collect();
    }
    if steps.is_empty() {
        return Err(Error::Config("runs share no evaluation step".into()));
    }
    let steps: Vec<usize> = steps.into_iter().collect();
    let mut order: Vec<Algo> = Vec::new();
    for r in runs {
        if !order.contains(&r.algo) {
            order.push(r.algo);
        }
    }
    let curves = order
        .into_iter()
        .map(|algo| {
            let group: Vec<BTreeMap<usize, f64>> = runs
                .iter()
                .filter(|r| r.algo == algo)
                .map(|r| r.records.iter().map(|m| (m.step, m.overall_success)).collect())
                .collect();
            let (mut m, mut s) = (Vec::new(), Vec::new());
            for step in &steps {
                let xs: Vec<f64> = group.iter().map(|g| g[step]).collect();
                m.push(mean(&xs));
                s.push(std_dev(&xs, StdConvention::Sample));
            }
            Curve {
                algo,
                runs: group.len(),
                mean: m,
                std: s,
            }
        })
        .collect();
    Ok(Comparison { steps, curves })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step");
        for c in &self.curves {
            out.push_str(&format!(",{0}_mean,{0}_std", c.algo));
        }
        out.push('\n');
        for (i, step) in self.steps.iter().enumerate() {
            out.push_str(&step.to_string());
            for c in &self.curves {
                out.push_str(&format!(",{},{}", c.mean[i], c.std[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> BTreeMap<String, AlgoSummary> {
        self.curves
            .iter()
            .map(|c| {
                let last = c.mean.len() - 1;
                let hit = c.mean.iter().position(|&m| m >= SUCCESS_THRESHOLD);
                (
                    c.algo.to_string(),
                    AlgoSummary {
                        runs: c.runs,
                        final_success: c.mean[last],
                        final_success_std: c.std[last],
                        steps_to_threshold: hit.map(|i| self.steps[i]),
                    },
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(algo: Algo, env: &str, succ: &[(usize, f64)]) -> RunMetrics {
        RunMetrics {
            label: format!("{algo}"),
            env: env.into(),
            algo,
            records: succ
                .iter()
                .map(|&(step, s)| MetricsRecord {
                    step,
                    algo,
                    per_stage_success: vec![s],
                    overall_success: s,
                    mean_return: 0.0,
                    reversals_per_episode: 0.0,
                    losses: BTreeMap::new(),
                    grad_variance: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn csv_layout_and_sample_std() {
        let runs = [
            run(Algo::Cmppo, "e", &[(10, 0.2), (20, 0.6)]),
            run(Algo::Cmppo, "e", &[(10, 0.4), (20, 0.8)]),
            run(Algo::Cmppo, "e", &[(10, 0.6), (20, 1.0), (30, 1.0)]),
            run(Algo::Mppo, "e", &[(10, 0.0), (20, 0.1)]),
        ];
        let c = compare(&runs).unwrap();
        let csv = c.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,cmppo_mean,cmppo_std,mppo_mean,mppo_std");
        assert_eq!(lines.len(), 3);
        assert!((c.curves[0].std[0] - 0.2).abs() < 1e-12);
        let s = c.summary();
        assert_eq!(s["cmppo"].steps_to_threshold, Some(20));
        assert_eq!(s["mppo"].steps_to_threshold, None);
        assert!((s["cmppo"].final_success - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rejects_single_runs_and_mixed_envs() {
        assert!(compare(&[run(Algo::Cmsac, "e", &[(1, 0.0)])]).is_err());
        let mixed = [run(Algo::Cmsac, "a", &[(1, 0.0)]), run(Algo::Msac, "b", &[(1, 0.0)])];
        assert!(compare(&mixed).unwrap_err().to_string().contains("is on"));
    }
}
