//! Diagonal Gaussian policy helpers shared by the PPO and SAC agents.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::nn::{gaussian_nll, HeadSpec, Mlp, NetworkSpec, LOG_STD_HEAD};
use crate::rng::Rng;

const TANH_EPS: f64 = 1e-6;

/// Network with `mean` and `log_std` heads of width `dim`.
pub fn policy_spec(obs_dim: usize, hidden: &[usize], dim: usize) -> NetworkSpec {
    NetworkSpec::new(
        obs_dim,
        hidden,
        vec![HeadSpec::new("mean", dim), HeadSpec::new(LOG_STD_HEAD, dim)],
    )
}

/// Splits a `rows x 2d` policy output into (mean, log_std) blocks.
pub fn split_heads(out: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = out.len() / (2 * dim);
    let mut mean = Vec::with_capacity(rows * dim);
    let mut log_std = Vec::with_capacity(rows * dim);
    for r in out.chunks(2 * dim) {
        mean.extend_from_slice(&r[..dim]);
        log_std.extend_from_slice(&r[dim..]);
    }
    (mean, log_std)
}

/// Joins per-head gradients back into the output layout.
pub fn join_heads(d_mean: &[f64], d_log_std: &[f64], dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * d_mean.len());
    for (m, s) in d_mean.chunks(dim).zip(d_log_std.chunks(dim)) {
        out.extend_from_slice(m);
        out.extend_from_slice(s);
    }
    out
}

pub fn standard_normal(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Per-dimension Gaussian log density.
pub fn log_prob(x: f64, mean: f64, log_std: f64) -> f64 {
    -gaussian_nll(mean, log_std, x)
}

/// d log N(x; mean, std) / d(mean, log_std).
pub fn log_prob_grad(x: f64, mean: f64, log_std: f64) -> (f64, f64) {
    let z = (x - mean) * (-log_std).exp();
    (z * (-log_std).exp(), z * z - 1.0)
}

/// Per-dimension log density of a tanh-squashed Gaussian sample
/// `a = tanh(u)`, with `u = mean + std * eps`.
pub fn squashed_log_prob(eps: f64, log_std: f64, a: f64) -> f64 {
    -0.5 * eps * eps - log_std - 0.918_938_533_204_672_7 - (1.0 - a * a + TANH_EPS).ln()
}

/// Derivative of `-ln(1 - tanh(u)^2 + eps)` with respect to `u`.
pub fn squash_correction_grad(a: f64) -> f64 {
    2.0 * a * (1.0 - a * a) / (1.0 - a * a + TANH_EPS)
}

/// Deterministic action of a Gaussian policy network.
pub fn mean_action(net: &Mlp, obs: &[f64], dim: usize) -> Result<Vec<f64>> {
    let out = net.forward_one(obs)?;
    Ok(out[..dim].to_vec())
}
