use crate::error::{Error, Result};

/// Per-column generalized advantage estimates and value targets over one
/// subtask episode.
///
/// `rewards` and `values` are `T x J` row-major. `bootstrap` is the value
/// vector of the state after the last step when the episode was cut short;
/// `None` means the episode ended and the tail value is zero.
pub fn factored_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: Option<&[f64]>,
    n_cols: usize,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n_cols == 0 || rewards.len() % n_cols != 0 {
        return Err(Error::dim("factored rewards", n_cols, rewards.len()));
    }
    if values.len() != rewards.len() {
        return Err(Error::dim("factored values", rewards.len(), values.len()));
    }
    if let Some(b) = bootstrap {
        if b.len() != n_cols {
            return Err(Error::dim("bootstrap value", n_cols, b.len()));
        }
    }
    let t_len = rewards.len() / n_cols;
    let mut adv = vec![0.0; rewards.len()];
    for j in 0..n_cols {
        let mut next_value = bootstrap.map_or(0.0, |b| b[j]);
        let mut running = 0.0;
        for t in (0..t_len).rev() {
            let i = t * n_cols + j;
            let delta = rewards[i] + gamma * next_value - values[i];
            running = delta + gamma * lambda * running;
            adv[i] = running;
            next_value = values[i];
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Standardizes each column of a `n x cols` block in place.
pub fn standardize_columns(x: &mut [f64], cols: usize) {
    let n = x.len() / cols;
    if n < 2 {
        return;
    }
    for j in 0..cols {
        let mean = (0..n).map(|r| x[r * cols + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (x[r * cols + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt() + 1e-8;
        for r in 0..n {
            x[r * cols + j] = (x[r * cols + j] - mean) / sd;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduces_to_returns() {
        let r = [1.0, 2.0, 3.0];
        let (adv, ret) = factored_gae(&r, &[0.0; 3], None, 1, 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![6.0, 5.0, 3.0]);
        assert_eq!(ret, adv);
    }

    #[test]
    fn one_hot_reward_stays_in_its_column() {
        let r = [0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let (adv, _) = factored_gae(&r, &[0.0; 6], None, 3, 0.99, 0.95).unwrap();
        for t in 0..2 {
            assert_eq!(adv[t * 3], 0.0);
            assert_eq!(adv[t * 3 + 2], 0.0);
            assert!(adv[t * 3 + 1] > 0.0);
        }
    }

    #[test]
    fn bootstrap_enters_the_tail() {
        let (adv, _) = factored_gae(&[0.0], &[0.0], Some(&[2.0]), 1, 0.5, 1.0).unwrap();
        assert_eq!(adv, vec![1.0]);
    }

    #[test]
    fn shape_errors() {
        assert!(factored_gae(&[1.0, 2.0, 3.0], &[0.0; 3], None, 2, 0.9, 0.9).is_err());
        assert!(factored_gae(&[1.0], &[0.0; 2], None, 1, 0.9, 0.9).is_err());
    }
}
