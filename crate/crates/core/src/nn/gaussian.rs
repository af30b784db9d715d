use serde::{Deserialize, Serialize};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub log_std: f64,
}

impl GaussianPrediction {
    pub fn new(mean: f64, log_std: f64) -> Self {
        Self {
            mean,
            log_std: log_std.clamp(LOG_STD_MIN, LOG_STD_MAX),
        }
    }

    pub fn from_std(mean: f64, std: f64) -> Self {
        Self::new(mean, std.ln())
    }

    pub fn std(&self) -> f64 {
        self.log_std.exp()
    }
}

/// Negative log density of `x` under N(mean, exp(log_std)^2).
pub fn gaussian_nll(mean: f64, log_std: f64, x: f64) -> f64 {
    let z = (x - mean) * (-log_std).exp();
    HALF_LOG_2PI + log_std + 0.5 * z * z
}

/// Partial derivatives of [`gaussian_nll`] with respect to mean and log_std.
pub fn gaussian_nll_grad(mean: f64, log_std: f64, x: f64) -> (f64, f64) {
    let inv_var = (-2.0 * log_std).exp();
    let d = x - mean;
    (-d * inv_var, 1.0 - d * d * inv_var)
}

/// KL(p || q) between univariate Gaussians.
pub fn gaussian_kl(p: &GaussianPrediction, q: &GaussianPrediction) -> f64 {
    let var_ratio = (2.0 * (p.log_std - q.log_std)).exp();
    let inv_var_q = (-2.0 * q.log_std).exp();
    let d = p.mean - q.mean;
    let kl = q.log_std - p.log_std + 0.5 * (var_ratio + d * d * inv_var_q) - 0.5;
    kl.max(0.0)
}

/// Per-dimension log density of a diagonal Gaussian, written into `out`.
pub fn diag_log_prob(x: &[f64], mean: &[f64], log_std: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = -gaussian_nll(mean[i], log_std[i], x[i]);
    }
}
