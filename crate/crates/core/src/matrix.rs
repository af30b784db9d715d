//! Binary action × reward-term causal matrices, their JSON file format and
//! DOT rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Provenance attached to a matrix file entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MatrixMeta {
    pub seed: Option<u64>,
    pub counts: BTreeMap<String, usize>,
    pub cv_convention: String,
    pub kl_direction: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub empty_columns: Vec<String>,
}

/// Rows are actions, columns are reward terms; entry 1 means the action causes the term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalMatrix {
    pub stage: usize,
    #[serde(rename = "actions")]
    pub action_names: Vec<String>,
    #[serde(rename = "rewards")]
    pub reward_names: Vec<String>,
    #[serde(rename = "matrix")]
    entries: Vec<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<MatrixMeta>,
}

impl CausalMatrix {
    pub fn zeros(stage: usize, action_names: Vec<String>, reward_names: Vec<String>) -> Self {
        let entries = vec![vec![0; reward_names.len()]; action_names.len()];
        Self {
            stage,
            action_names,
            reward_names,
            entries,
            meta: None,
        }
    }

    pub fn ones(stage: usize, action_names: Vec<String>, reward_names: Vec<String>) -> Self {
        let mut m = Self::zeros(stage, action_names, reward_names);
        m.entries.iter_mut().for_each(|r| r.fill(1));
        m
    }

    pub fn from_rows(
        stage: usize,
        action_names: Vec<String>,
        reward_names: Vec<String>,
        rows: Vec<Vec<u8>>,
    ) -> Result<Self> {
        let m = Self {
            stage,
            action_names,
            reward_names,
            entries: rows,
            meta: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != self.action_names.len() {
            return Err(Error::dim(
                "causal matrix rows",
                self.action_names.len(),
                self.entries.len(),
            ));
        }
        for row in &self.entries {
            if row.len() != self.reward_names.len() {
                return Err(Error::dim(
                    "causal matrix columns",
                    self.reward_names.len(),
                    row.len(),
                ));
            }
            if row.iter().any(|&v| v > 1) {
                return Err(Error::Domain("causal matrix entries must be 0 or 1".into()));
            }
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn n_rewards(&self) -> usize {
        self.reward_names.len()
    }

    pub fn get(&self, action: usize, reward: usize) -> u8 {
        self.entries[action][reward]
    }

    pub fn set(&mut self, action: usize, reward: usize, value: bool) {
        self.entries[action][reward] = u8::from(value);
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.entries
    }

    pub fn row_sum(&self, action: usize) -> usize {
        self.entries[action].iter().map(|&v| usize::from(v)).sum()
    }

    pub fn column(&self, reward: usize) -> Vec<u8> {
        self.entries.iter().map(|r| r[reward]).collect()
    }

    /// Reward columns without any causing action.
    pub fn empty_columns(&self) -> Vec<usize> {
        (0..self.n_rewards())
            .filter(|&j| self.entries.iter().all(|r| r[j] == 0))
            .collect()
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.action_names.iter().position(|a| a == name)
    }

    pub fn reward_index(&self, name: &str) -> Option<usize> {
        self.reward_names.iter().position(|r| r == name)
    }

    /// Entry looked up by names; `None` if either name is unknown.
    pub fn edge(&self, action: &str, reward: &str) -> Option<bool> {
        Some(self.get(self.action_index(action)?, self.reward_index(reward)?) == 1)
    }

    /// Appends one all-ones column per penalty term.
    pub fn augment_with_penalty_columns(&self, penalty_names: &[String]) -> Result<Self> {
        for (i, p) in penalty_names.iter().enumerate() {
            if self.reward_names.contains(p) || penalty_names[..i].contains(p) {
                return Err(Error::Config(format!("duplicate reward name {p}")));
            }
        }
        let mut out = self.clone();
        out.reward_names.extend(penalty_names.iter().cloned());
        for row in &mut out.entries {
            row.extend(std::iter::repeat_n(1, penalty_names.len()));
        }
        Ok(out)
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            stage: self.stage,
            action_names: rows.iter().map(|&k| self.action_names[k].clone()).collect(),
            reward_names: self.reward_names.clone(),
            entries: rows.iter().map(|&k| self.entries[k].clone()).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Same entries, stage, and names; provenance dropped.
    pub fn same_structure(&self, other: &Self) -> bool {
        self.stage == other.stage
            && self.action_names == other.action_names
            && self.reward_names == other.reward_names
            && self.entries == other.entries
    }

    /// Row-major product `m · v` for a vector over the columns.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n_rewards() {
            return Err(Error::dim("causal matrix product", self.n_rewards(), v.len()));
        }
        Ok(self
            .entries
            .iter()
            .map(|row| {
                row.iter()
                    .zip(v)
                    .map(|(&m, &x)| if m == 1 { x } else { 0.0 })
                    .sum()
            })
            .collect())
    }
}

/// Serializes a list of per-stage matrices to pretty JSON with stable key order.
pub fn matrices_to_json(matrices: &[CausalMatrix]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(matrices)?;
    s.push('\n');
    Ok(s)
}

pub fn matrices_from_json(text: &str) -> Result<Vec<CausalMatrix>> {
    let ms: Vec<CausalMatrix> = serde_json::from_str(text)?;
    for m in &ms {
        m.validate()?;
    }
    Ok(ms)
}

pub fn save_matrices(path: &Path, matrices: &[CausalMatrix]) -> Result<()> {
    std::fs::write(path, matrices_to_json(matrices)?).map_err(|e| Error::io(path, e))
}

pub fn load_matrices(path: &Path) -> Result<Vec<CausalMatrix>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    matrices_from_json(&text)
}

const STAGE_COLORS: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Renders per-stage matrices as one digraph: actions are boxes, reward terms
/// are ellipses colored by stage, and each 1-entry becomes an edge.
///
/// A reward term that appears in several stages is drawn once in black and
/// labelled with all its stages. Columns with no causing action get a red
/// dashed outline and a `warning` attribute.
pub fn to_dot(matrices: &[CausalMatrix]) -> String {
    let mut actions: Vec<&str> = Vec::new();
    let mut rewards: Vec<(&str, Vec<usize>, bool)> = Vec::new();
    let mut edges: Vec<(&str, &str)> = Vec::new();
    for m in matrices {
        for a in &m.action_names {
            if !actions.contains(&a.as_str()) {
                actions.push(a);
            }
        }
        let empty = m.empty_columns();
        for (j, r) in m.reward_names.iter().enumerate() {
            let is_empty = empty.contains(&j);
            match rewards.iter_mut().find(|(name, _, _)| *name == r.as_str()) {
                Some((_, stages, e)) => {
                    if !stages.contains(&m.stage) {
                        stages.push(m.stage);
                    }
                    *e |= is_empty;
                }
                None => rewards.push((r, vec![m.stage], is_empty)),
            }
            for (k, a) in m.action_names.iter().enumerate() {
                if m.get(k, j) == 1 && !edges.contains(&(a.as_str(), r.as_str())) {
                    edges.push((a, r));
                }
            }
        }
    }

    let mut out = String::from("digraph causal {\n  rankdir=LR;\n");
    for a in &actions {
        let _ = writeln!(out, "  {} [shape=box];", quote(a));
    }
    for (r, stages, empty) in &rewards {
        let color = if stages.len() > 1 {
            "black"
        } else {
            STAGE_COLORS[(stages[0] - 1) % STAGE_COLORS.len()]
        };
        let label = stages
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let _ = write!(
            out,
            "  {} [shape=ellipse, color={}, stage={}",
            quote(r),
            quote(color),
            quote(&label)
        );
        if *empty {
            out.push_str(", style=dashed, fontcolor=\"red\", warning=\"no causal action\"");
        }
        out.push_str("];\n");
    }
    for (a, r) in &edges {
        let _ = writeln!(out, "  {} -> {};", quote(a), quote(r));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn augment_appends_all_ones_columns() {
        let mut m = CausalMatrix::zeros(1, names("a", 5), vec!["r_rho".into()]);
        m.set(0, 0, true);
        let aug = m
            .augment_with_penalty_columns(&["base".into(), "arm".into()])
            .unwrap();
        assert_eq!(aug.n_actions(), 5);
        assert_eq!(aug.n_rewards(), 3);
        for k in 0..5 {
            assert_eq!(aug.get(k, 1), 1);
            assert_eq!(aug.get(k, 2), 1);
        }
        assert_eq!(m.augment_with_penalty_columns(&[]).unwrap(), m);
        assert!(m.augment_with_penalty_columns(&["r_rho".into()]).is_err());
        assert!(m
            .augment_with_penalty_columns(&["p".into(), "p".into()])
            .is_err());
    }

    #[test]
    fn grasp_stage4_grip_row_after_augment() {
        let mut m = CausalMatrix::zeros(4, names("a", 7), vec!["r_gripper".into()]);
        m.set(6, 0, true);
        let aug = m
            .augment_with_penalty_columns(&["p1".into(), "p2".into()])
            .unwrap();
        assert_eq!(aug.rows()[6], vec![1, 1, 1]);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut m = CausalMatrix::zeros(2, names("a", 2), names("r", 3));
        m.set(1, 2, true);
        m.meta = Some(MatrixMeta {
            seed: Some(3),
            cv_convention: "sample".into(),
            kl_direction: "random_vs_do".into(),
            ..Default::default()
        });
        let text = matrices_to_json(std::slice::from_ref(&m)).unwrap();
        assert!(text.find("\"stage\"").unwrap() < text.find("\"actions\"").unwrap());
        let back = matrices_from_json(&text).unwrap();
        assert_eq!(back, vec![m]);
        assert!(matrices_from_json(r#"[{"stage":1,"actions":["a"],"rewards":["r"],"matrix":[[2]]}]"#).is_err());
        assert!(matrices_from_json("not json").is_err());
    }

    #[test]
    fn dot_is_deterministic_and_flags_empty_columns() {
        let mut m1 = CausalMatrix::zeros(1, names("a", 2), vec!["r_x".into(), "r_g".into()]);
        m1.set(0, 0, true);
        let m2 = CausalMatrix::zeros(2, names("a", 2), vec!["r_g".into()]);
        let dot = to_dot(&[m1.clone(), m2.clone()]);
        assert_eq!(dot, to_dot(&[m1, m2]));
        assert!(dot.contains("\"a0\" -> \"r_x\";"));
        assert!(!dot.contains("\"a1\" ->"));
        assert!(dot.contains("warning=\"no causal action\""));
        assert!(dot.contains("\"r_g\" [shape=ellipse, color=\"black\", stage=\"1,2\""));
    }

    #[test]
    fn mul_vec_matches_definition() {
        let m = CausalMatrix::from_rows(1, names("a", 2), names("r", 2), vec![vec![1, 0], vec![0, 1]])
            .unwrap();
        assert_eq!(m.mul_vec(&[2.0, -1.0]).unwrap(), vec![2.0, -1.0]);
        let ones = CausalMatrix::ones(1, names("a", 2), names("r", 2));
        assert_eq!(ones.mul_vec(&[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
        assert!(ones.mul_vec(&[1.0]).is_err());
    }
}
