//! Selection of causal actions from a list of KL divergences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StdConvention {
    /// divide by n - 1
    #[default]
    Sample,
    /// divide by n
    Population,
}

impl StdConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            StdConvention::Sample => "sample",
            StdConvention::Population => "population",
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation; a single element has zero spread under either convention.
pub fn std_dev(xs: &[f64], convention: StdConvention) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    let denom = match convention {
        StdConvention::Sample => (n - 1) as f64,
        StdConvention::Population => n as f64,
    };
    (ss / denom).sqrt()
}

/// std / mean.
pub fn coefficient_of_variation(xs: &[f64], convention: StdConvention) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Domain("coefficient of variation of an empty list".into()));
    }
    let m = mean(xs);
    if !(m > 0.0) {
        return Err(Error::Domain(format!(
            "coefficient of variation needs a positive mean, got {m}"
        )));
    }
    Ok(std_dev(xs, convention) / m)
}

/// Min-max scaling to [0, 1]. The flag is true when max == min, in which case
/// every value maps to 0.
pub fn min_max_normalize(xs: &[f64]) -> (Vec<f64>, bool) {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.is_empty() || !(hi > lo) {
        return (vec![0.0; xs.len()], true);
    }
    let span = hi - lo;
    (xs.iter().map(|x| (x - lo) / span).collect(), false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    pub eps_cv: f64,
    pub eps_normalize: f64,
    pub eps_direct: f64,
    pub cv_convention: StdConvention,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        Self {
            eps_cv: 1.0,
            eps_normalize: 0.1,
            eps_direct: 0.01,
            cv_convention: StdConvention::Sample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Normalized,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: Vec<usize>,
    /// None when the row mean is zero
    pub cv: Option<f64>,
    pub branch: Branch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<Vec<f64>>,
}

/// Picks the action indices whose KL stands out: when the row is dispersed
/// (cv > eps_cv) entries above eps_normalize after min-max scaling, otherwise
/// raw entries above eps_direct.
pub fn select_causal_actions(row: &[f64], t: &SelectionThresholds) -> Result<Selection> {
    if row.is_empty() {
        return Err(Error::Domain("empty KL row".into()));
    }
    if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Domain(format!("KL row must be finite and >= 0: {row:?}")));
    }
    let cv = coefficient_of_variation(row, t.cv_convention).ok();
    match cv {
        Some(c) if c > t.eps_cv => {
            let (norm, _) = min_max_normalize(row);
            let selected = (0..row.len()).filter(|&i| norm[i] > t.eps_normalize).collect();
            Ok(Selection {
                selected,
                cv,
                branch: Branch::Normalized,
                normalized: Some(norm),
            })
        }
        _ => Ok(Selection {
            selected: (0..row.len()).filter(|&i| row[i] > t.eps_direct).collect(),
            cv,
            branch: Branch::Direct,
            normalized: None,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cv_examples() {
        let c = coefficient_of_variation(&[1.0; 4], StdConvention::Sample).unwrap();
        assert_eq!(c, 0.0);
        let row = [0.0532, 0.0122, 0.0002, 0.0003, 0.0001];
        let c = coefficient_of_variation(&row, StdConvention::Sample).unwrap();
        assert!((c - 1.739).abs() < 1e-3, "{c}");
        assert!(coefficient_of_variation(&[0.0, 0.0], StdConvention::Sample).is_err());
        assert!(coefficient_of_variation(&[], StdConvention::Sample).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(min_max_normalize(&[1.0, 2.0, 3.0]), (vec![0.0, 0.5, 1.0], false));
        assert_eq!(min_max_normalize(&[5.0, 5.0]), (vec![0.0, 0.0], true));
    }

    #[test]
    fn direct_branch_example() {
        let s = select_causal_actions(&[0.02, 0.015, 0.018, 0.005], &Default::default()).unwrap();
        assert_eq!(s.branch, Branch::Direct);
        assert!((s.cv.unwrap() - 0.46).abs() < 0.01);
        assert_eq!(s.selected, vec![0, 1, 2]);
    }

    #[test]
    fn all_zero_row_selects_nothing() {
        let s = select_causal_actions(&[0.0, 0.0], &Default::default()).unwrap();
        assert!(s.selected.is_empty());
        assert_eq!(s.cv, None);
        assert!(select_causal_actions(&[], &Default::default()).is_err());
    }
}
