use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::advantage::{factored_gae, standardize_columns};
use super::policy::{join_heads, log_prob, log_prob_grad, mean_action, policy_spec, split_heads, standard_normal};
use super::space::CausalActionSpace;
use super::{GradStats, Losses, PpoConfig};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, HeadSpec, Mlp, NetworkSpec};
use crate::rng::Rng;

/// How per-dimension log-probabilities are weighted in the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgMode {
    /// per-dimension ratios weighted by `m · A`
    Causal,
    /// one joint ratio weighted by the summed advantage
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoStep {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub logp: Vec<f64>,
    pub reward: Vec<f64>,
}

/// A finished or cut subtask episode waiting for the next update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoSegment {
    pub steps: Vec<PpoStep>,
    /// observation after the last step when the value is bootstrapped
    pub bootstrap_obs: Option<Vec<f64>>,
}

/// Clipped surrogate loss and its gradient with respect to the policy
/// parameters, for one minibatch.
///
/// `adv` is `rows x columns`. Returns (loss, gradient, per-dimension weights
/// `rows x dim`).
#[allow(clippy::too_many_arguments)]
pub fn ppo_policy_grad(
    policy: &Mlp,
    mode: PgMode,
    mask: &[f64],
    n_cols: usize,
    clip: f64,
    obs: &[f64],
    rows: usize,
    actions: &[f64],
    old_logp: &[f64],
    adv: &[f64],
    ent_coef: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let dim = actions.len() / rows;
    if mask.len() != dim * n_cols || adv.len() != rows * n_cols || old_logp.len() != rows * dim {
        return Err(Error::dim("ppo batch", dim * n_cols, mask.len()));
    }
    let (out, tape) = policy.forward_tape(obs, rows)?;
    let (mean, log_std) = split_heads(&out, dim);
    let n = rows as f64;
    let mut weights = vec![0.0; rows * dim];
    let mut d_logp = vec![0.0; rows * dim];
    let mut loss = 0.0;
    for r in 0..rows {
        let a = &adv[r * n_cols..(r + 1) * n_cols];
        let lp: Vec<f64> = (0..dim)
            .map(|k| log_prob(actions[r * dim + k], mean[r * dim + k], log_std[r * dim + k]))
            .collect();
        match mode {
            PgMode::Causal => {
                for k in 0..dim {
                    let w: f64 = (0..n_cols).map(|j| mask[k * n_cols + j] * a[j]).sum();
                    weights[r * dim + k] = w;
                    let ratio = (lp[k] - old_logp[r * dim + k]).exp();
                    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
                    let (u, c) = (ratio * w, clipped * w);
                    loss -= u.min(c) / n;
                    if u <= c {
                        d_logp[r * dim + k] = -ratio * w / n;
                    }
                }
            }
            PgMode::Joint => {
                let w: f64 = a.iter().sum();
                weights[r * dim..(r + 1) * dim].fill(w);
                let old: f64 = old_logp[r * dim..(r + 1) * dim].iter().sum();
                let ratio = (lp.iter().sum::<f64>() - old).exp();
                let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
                let (u, c) = (ratio * w, clipped * w);
                loss -= u.min(c) / n;
                if u <= c {
                    d_logp[r * dim..(r + 1) * dim].fill(-ratio * w / n);
                }
            }
        }
    }
    let mut d_mean = vec![0.0; rows * dim];
    let mut d_log_std = vec![0.0; rows * dim];
    for i in 0..rows * dim {
        let (gm, gs) = log_prob_grad(actions[i], mean[i], log_std[i]);
        d_mean[i] = d_logp[i] * gm;
        d_log_std[i] = d_logp[i] * gs;
        if ent_coef != 0.0 {
            loss -= ent_coef * log_std[i] / n;
            d_log_std[i] -= ent_coef / n;
        }
    }
    let mut grad = vec![0.0; policy.n_params()];
    policy.backward(&tape, &join_heads(&d_mean, &d_log_std, dim), &mut grad);
    Ok((loss, grad, weights))
}

/// Mean squared error over all value heads and its parameter gradient.
pub fn value_loss_grad(value: &Mlp, obs: &[f64], rows: usize, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    value.loss_grad(obs, rows, |out| {
        let n = out.len() as f64;
        let loss = out.iter().zip(targets).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / n;
        let d = out.iter().zip(targets).map(|(o, t)| 2.0 * (o - t) / n).collect();
        (loss, d)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoAgent {
    pub space: CausalActionSpace,
    pub mode: PgMode,
    pub policy: Mlp,
    pub value: Mlp,
    policy_opt: Adam,
    value_opt: Adam,
    pub config: PpoConfig,
    pub gamma: f64,
    segments: Vec<PpoSegment>,
    pub stats: GradStats,
}

impl PpoAgent {
    pub fn new(
        space: CausalActionSpace,
        mode: PgMode,
        obs_dim: usize,
        config: PpoConfig,
        gamma: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let dim = space.dim();
        let policy = Mlp::with_output_gain(policy_spec(obs_dim, &config.hidden, dim), 0.01, rng)?;
        let value = Mlp::new(
            NetworkSpec::new(obs_dim, &config.hidden, vec![HeadSpec::new("value", space.n_columns())]),
            rng,
        )?;
        Ok(Self {
            policy_opt: Adam::new(policy.n_params(), config.lr),
            value_opt: Adam::new(value.n_params(), config.lr),
            space,
            mode,
            policy,
            value,
            config,
            gamma,
            segments: Vec::new(),
            stats: GradStats::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Samples a local action; returns it with its per-dimension log-probability.
    pub fn act(&self, obs: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
        let dim = self.dim();
        let out = self.policy.forward_one(obs)?;
        let eps = standard_normal(rng, dim);
        let mut a = Vec::with_capacity(dim);
        let mut lp = Vec::with_capacity(dim);
        for k in 0..dim {
            let (m, s) = (out[k], out[dim + k]);
            let x = m + s.exp() * eps[k];
            lp.push(log_prob(x, m, s));
            a.push(x);
        }
        Ok((a, lp))
    }

    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        mean_action(&self.policy, obs, self.dim())
    }

    pub fn push_segment(&mut self, seg: PpoSegment) {
        if !seg.steps.is_empty() {
            self.segments.push(seg);
        }
    }

    pub fn buffered(&self) -> usize {
        self.segments.iter().map(|s| s.steps.len()).sum()
    }

    /// Runs the PPO epochs over everything buffered, then clears the buffer.
    pub fn update(&mut self, rng: &mut Rng) -> Result<Option<Losses>> {
        if self.segments.is_empty() {
            log::warn!("stage {} agent has no data to update on", self.space.stage);
            return Ok(None);
        }
        let dim = self.dim();
        let cols = self.space.n_columns();
        let obs_dim = self.policy.input_dim();
        let mut obs = Vec::new();
        let mut act = Vec::new();
        let mut old = Vec::new();
        let mut adv = Vec::new();
        let mut ret = Vec::new();
        for seg in std::mem::take(&mut self.segments) {
            let n = seg.steps.len();
            let seg_obs: Vec<f64> = seg.steps.iter().flat_map(|s| s.obs.iter().copied()).collect();
            let values = self.value.forward(&seg_obs, n)?;
            let boot = match &seg.bootstrap_obs {
                Some(o) => Some(self.value.forward_one(o)?),
                None => None,
            };
            let rewards: Vec<f64> = seg.steps.iter().flat_map(|s| s.reward.iter().copied()).collect();
            let (a, r) = factored_gae(&rewards, &values, boot.as_deref(), cols, self.gamma, self.config.gae_lambda)?;
            obs.extend(seg_obs);
            adv.extend(a);
            ret.extend(r);
            for s in seg.steps {
                act.extend(s.action);
                old.extend(s.logp);
            }
        }
        let n = obs.len() / obs_dim;
        let mask = self.space.mask();
        let mut order: Vec<usize> = (0..n).collect();
        let (mut p_loss, mut v_loss, mut count) = (0.0, 0.0, 0usize);
        let mut all_weights = Vec::new();
        for _ in 0..self.config.opt_epochs {
            order.shuffle(rng);
            for chunk in order.chunks(self.config.batch) {
                let rows = chunk.len();
                let gather = |src: &[f64], w: usize| -> Vec<f64> {
                    chunk.iter().flat_map(|&i| src[i * w..(i + 1) * w].iter().copied()).collect()
                };
                let xb = gather(&obs, obs_dim);
                let ab = gather(&act, dim);
                let lb = gather(&old, dim);
                let mut advb = gather(&adv, cols);
                standardize_columns(&mut advb, cols);
                let rb = gather(&ret, cols);
                let (pl, mut pg, w) = ppo_policy_grad(
                    &self.policy,
                    self.mode,
                    &mask,
                    cols,
                    self.config.clip,
                    &xb,
                    rows,
                    &ab,
                    &lb,
                    &advb,
                    self.config.ent_coef,
                )?;
                let (vl, mut vg) = value_loss_grad(&self.value, &xb, rows, &rb)?;
                if !(pl.is_finite() && vl.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "stage {} ppo losses policy {pl} value {vl}",
                        self.space.stage
                    )));
                }
                clip_grad_norm(&mut pg, self.config.max_grad_norm);
                clip_grad_norm(&mut vg, self.config.max_grad_norm);
                self.policy_opt.step(self.policy.params_mut(), &pg);
                self.value_opt.step(self.value.params_mut(), &vg);
                p_loss += pl;
                v_loss += vl;
                count += 1;
                if all_weights.is_empty() {
                    all_weights = w.clone();
                } else if all_weights.len() < 4096 * dim {
                    all_weights.extend(w);
                }
            }
        }
        self.stats = GradStats::from_weights(&all_weights, dim);
        let c = count.max(1) as f64;
        Ok(Some(Losses {
            policy: p_loss / c,
            critic: v_loss / c,
            alpha: None,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use crate::matrix::CausalMatrix;

    fn names(n: usize, p: &str) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    #[test]
    fn zero_weight_dimension_gets_no_gradient() {
        let mut rng = Rng::seed_from_u64(1);
        let policy = Mlp::new(policy_spec(3, &[8], 2), &mut rng).unwrap();
        let rows = 5;
        let obs = standard_normal(&mut rng, rows * 3);
        let actions = standard_normal(&mut rng, rows * 2);
        let old: Vec<f64> = standard_normal(&mut rng, rows * 2).iter().map(|x| x * 0.1 - 1.0).collect();
        let mut adv = standard_normal(&mut rng, rows * 2);
        for r in 0..rows {
            adv[r * 2 + 1] = 0.0;
        }
        // dimension 1 only causes column 1
        let m = CausalMatrix::from_rows(1, names(2, "a"), names(2, "r"), vec![vec![1, 0], vec![0, 1]]).unwrap();
        let mask: Vec<f64> = m.rows().iter().flatten().map(|&v| v as f64).collect();
        let (_, g, _) = ppo_policy_grad(&policy, PgMode::Causal, &mask, 2, 0.2, &obs, rows, &actions, &old, &adv, 0.0).unwrap();
        // output layer: weights 8 x 4 then bias 4; columns 1 and 3 belong to dimension 1
        let off = 3 * 8 + 8;
        for i in 0..8 {
            assert_eq!(g[off + i * 4 + 1], 0.0);
            assert_eq!(g[off + i * 4 + 3], 0.0);
        }
        assert_eq!(g[off + 32 + 1], 0.0);
        assert_eq!(g[off + 32 + 3], 0.0);
        assert!(g[off..off + 32].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn update_does_not_lower_the_surrogate() {
        let mut rng = Rng::seed_from_u64(2);
        let space = CausalActionSpace::full(1, &names(2, "a"));
        let cfg = PpoConfig {
            hidden: vec![16],
            lr: 1e-3,
            opt_epochs: 1,
            batch: 64,
            ..Default::default()
        };
        let mut agent = PpoAgent::new(space, PgMode::Joint, 3, cfg, 0.99, &mut rng).unwrap();
        let mut steps = Vec::new();
        for _ in 0..64 {
            let obs = standard_normal(&mut rng, 3);
            let (a, lp) = agent.act(&obs, &mut rng).unwrap();
            let reward = vec![a[0] - a[1]];
            steps.push(PpoStep { obs, action: a, logp: lp, reward });
        }
        let seg = PpoSegment { steps: steps.clone(), bootstrap_obs: None };
        let eval = |agent: &PpoAgent| {
            let obs: Vec<f64> = steps.iter().flat_map(|s| s.obs.clone()).collect();
            let act: Vec<f64> = steps.iter().flat_map(|s| s.action.clone()).collect();
            let old: Vec<f64> = steps.iter().flat_map(|s| s.logp.clone()).collect();
            let rew: Vec<f64> = steps.iter().map(|s| s.reward[0]).collect();
            let mut adv = rew.clone();
            standardize_columns(&mut adv, 1);
            ppo_policy_grad(&agent.policy, PgMode::Joint, &[1.0, 1.0], 1, 0.2, &obs, 64, &act, &old, &adv, 0.0)
                .unwrap()
                .0
        };
        let before = eval(&agent);
        agent.value = Mlp::with_output_gain(agent.value.spec().clone(), 0.0, &mut rng).unwrap();
        agent.config.gae_lambda = 0.0;
        agent.gamma = 0.0;
        agent.push_segment(seg);
        agent.update(&mut rng).unwrap().unwrap();
        let after = eval(&agent);
        assert!(after <= before + 1e-12, "{before} -> {after}");
    }

    #[test]
    fn empty_buffer_is_skipped() {
        let mut rng = Rng::seed_from_u64(3);
        let space = CausalActionSpace::full(1, &names(2, "a"));
        let mut agent = PpoAgent::new(space, PgMode::Joint, 3, PpoConfig::default(), 0.99, &mut rng).unwrap();
        assert!(agent.update(&mut rng).unwrap().is_none());
    }
}
