use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::CausalMatrix;
use crate::mdp::ActionVector;

/// Name of the single reward column used by the non-causal baselines.
pub const SUMMED_REWARD: &str = "r_sum";

/// Rows with a nonzero sum, in action order.
pub fn causal_actions(m: &CausalMatrix) -> Result<Vec<usize>> {
    let rows: Vec<usize> = (0..m.n_actions()).filter(|&k| m.row_sum(k) > 0).collect();
    if rows.is_empty() {
        return Err(Error::Config(format!(
            "stage {} causal matrix has no causal action",
            m.stage
        )));
    }
    Ok(rows)
}

/// `w = m · adv`, one weight per policy dimension.
pub fn causal_pg_weights(m: &CausalMatrix, adv: &[f64]) -> Result<Vec<f64>> {
    m.mul_vec(adv)
}

/// A stage agent's action subspace and training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalActionSpace {
    pub stage: usize,
    /// global indices of the controlled action dimensions
    pub selected: Vec<usize>,
    pub n_global: usize,
    /// `selected x columns`, penalty columns included
    pub matrix: CausalMatrix,
    /// whether each training column is one reward term or the summed reward
    pub summed: bool,
}

impl CausalActionSpace {
    /// Causal space: rows picked from the discovery matrix, then penalty
    /// columns appended.
    pub fn from_matrix(m: &CausalMatrix, penalty_names: &[String]) -> Result<Self> {
        let selected = causal_actions(m)?;
        let matrix = m
            .augment_with_penalty_columns(penalty_names)?
            .select_rows(&selected);
        Ok(Self {
            stage: m.stage,
            n_global: m.n_actions(),
            selected,
            matrix,
            summed: false,
        })
    }

    /// Baseline space: every action and one all-ones column for the summed reward.
    pub fn full(stage: usize, action_names: &[String]) -> Self {
        Self {
            stage,
            selected: (0..action_names.len()).collect(),
            n_global: action_names.len(),
            matrix: CausalMatrix::ones(
                stage,
                action_names.to_vec(),
                vec![SUMMED_REWARD.to_string()],
            ),
            summed: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.selected.len()
    }

    pub fn n_columns(&self) -> usize {
        self.matrix.n_rewards()
    }

    /// Embeds a local action into the global action vector; unselected
    /// dimensions are zero.
    pub fn embed(&self, local: &[f64]) -> Result<ActionVector> {
        if local.len() != self.dim() {
            return Err(Error::dim("local action", self.dim(), local.len()));
        }
        let mut a = vec![0.0; self.n_global];
        for (&k, &v) in self.selected.iter().zip(local) {
            a[k] = v;
        }
        ActionVector::new(a)
    }

    /// Training reward columns from a stage-sliced reward vector.
    pub fn columns(&self, sliced: &[f64]) -> Result<Vec<f64>> {
        if self.summed {
            return Ok(vec![sliced.iter().sum()]);
        }
        if sliced.len() != self.n_columns() {
            return Err(Error::dim("training reward", self.n_columns(), sliced.len()));
        }
        Ok(sliced.to_vec())
    }

    /// Matrix entries as f64, row-major `dim x columns`.
    pub fn mask(&self) -> Vec<f64> {
        self.matrix
            .rows()
            .iter()
            .flat_map(|r| r.iter().map(|&v| v as f64))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn row_sum_rule() {
        let m = CausalMatrix::from_rows(
            1,
            names(&["a0", "a1", "a2"]),
            names(&["r0", "r1"]),
            vec![vec![1, 0], vec![0, 1], vec![0, 0]],
        )
        .unwrap();
        assert_eq!(causal_actions(&m).unwrap(), vec![0, 1]);
        let z = CausalMatrix::zeros(1, names(&["a0"]), names(&["r0"]));
        assert!(matches!(causal_actions(&z), Err(Error::Config(_))));
    }

    #[test]
    fn penalties_do_not_widen_the_space() {
        let actions = names(&["armx", "army", "armz", "armrx", "armry", "armrz", "grip"]);
        let mut m = CausalMatrix::zeros(4, actions, names(&["r_gripper"]));
        m.set(6, 0, true);
        let s = CausalActionSpace::from_matrix(&m, &names(&["r_reach", "r_table"])).unwrap();
        assert_eq!(s.selected, vec![6]);
        assert_eq!(s.matrix.rows(), &[vec![1, 1, 1]]);
        let a = s.embed(&[0.7]).unwrap();
        assert_eq!(a.as_slice(), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.7]);
    }

    #[test]
    fn weight_examples() {
        let id = CausalMatrix::from_rows(1, names(&["a", "b"]), names(&["x", "y"]), vec![vec![1, 0], vec![0, 1]]).unwrap();
        assert_eq!(causal_pg_weights(&id, &[2.0, -1.0]).unwrap(), vec![2.0, -1.0]);
        let ones = CausalMatrix::ones(1, names(&["a", "b"]), names(&["x", "y"]));
        assert_eq!(causal_pg_weights(&ones, &[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
        let l = [0.5, -0.2];
        let w = causal_pg_weights(&id, &[2.0, -1.0]).unwrap();
        let surrogate: f64 = -l.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        assert!((surrogate + 1.2).abs() < 1e-12);
        assert!(causal_pg_weights(&id, &[1.0]).is_err());
    }

    #[test]
    fn baseline_sums_the_reward() {
        let s = CausalActionSpace::full(2, &names(&["a", "b"]));
        assert_eq!(s.columns(&[1.0, 2.0, -0.5]).unwrap(), vec![2.5]);
        assert_eq!(s.mask(), vec![1.0, 1.0]);
    }
}
