use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::policy::{join_heads, policy_spec, split_heads, squash_correction_grad, squashed_log_prob, standard_normal};
use super::space::CausalActionSpace;
use super::{GradStats, Losses, SacConfig};
use crate::error::{Error, Result};
use crate::nn::{Adam, HeadSpec, Mlp, NetworkSpec};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacSample {
    pub obs: Vec<f64>,
    /// squashed local action in [-1, 1]
    pub action: Vec<f64>,
    pub reward: Vec<f64>,
    pub next_obs: Vec<f64>,
    /// no bootstrap from `next_obs`
    pub done: bool,
}

/// Fixed-capacity ring buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<SacSample>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn push(&mut self, s: SacSample) {
        if self.items.len() < self.capacity {
            self.items.push(s);
        } else {
            self.items[self.next] = s;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &SacSample {
        &self.items[i]
    }
}

fn concat_rows(a: &[f64], a_w: usize, b: &[f64], b_w: usize) -> Vec<f64> {
    let rows = a.len() / a_w;
    let mut out = Vec::with_capacity(rows * (a_w + b_w));
    for r in 0..rows {
        out.extend_from_slice(&a[r * a_w..(r + 1) * a_w]);
        out.extend_from_slice(&b[r * b_w..(r + 1) * b_w]);
    }
    out
}

/// Squashed actions and per-dimension log-probabilities for given noise.
pub fn squashed_sample(actor: &Mlp, obs: &[f64], rows: usize, eps: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = eps.len() / rows;
    let out = actor.forward(obs, rows)?;
    let (mean, log_std) = split_heads(&out, dim);
    let mut a = vec![0.0; rows * dim];
    let mut lp = vec![0.0; rows * dim];
    for i in 0..rows * dim {
        a[i] = (mean[i] + log_std[i].exp() * eps[i]).tanh();
        lp[i] = squashed_log_prob(eps[i], log_std[i], a[i]);
    }
    Ok((a, lp))
}

/// Per-head minimum of the two critics and, for each head, the gradient of
/// that minimum with respect to the action inputs (`heads x rows x dim`).
fn min_q_and_action_grads(
    q1: &Mlp,
    q2: &Mlp,
    input: &[f64],
    rows: usize,
    obs_dim: usize,
    dim: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let cols = q1.output_dim();
    let (o1, t1) = q1.forward_tape(input, rows)?;
    let (o2, t2) = q2.forward_tape(input, rows)?;
    let qmin: Vec<f64> = o1.iter().zip(&o2).map(|(a, b)| a.min(*b)).collect();
    let mut scratch1 = vec![0.0; q1.n_params()];
    let mut scratch2 = vec![0.0; q2.n_params()];
    let mut grads = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut d1 = vec![0.0; rows * cols];
        let mut d2 = vec![0.0; rows * cols];
        for r in 0..rows {
            let i = r * cols + j;
            if o1[i] <= o2[i] {
                d1[i] = 1.0;
            } else {
                d2[i] = 1.0;
            }
        }
        let g1 = q1.backward(&t1, &d1, &mut scratch1);
        let g2 = q2.backward(&t2, &d2, &mut scratch2);
        let w = obs_dim + dim;
        let mut g = vec![0.0; rows * dim];
        for r in 0..rows {
            for k in 0..dim {
                g[r * dim + k] = g1[r * w + obs_dim + k] + g2[r * w + obs_dim + k];
            }
        }
        grads.push(g);
    }
    Ok((qmin, grads))
}

/// Actor loss and gradient for a batch with fixed exploration noise.
///
/// Dimension `k` is pushed along `sum_j mask[k, j] * dQmin_j / da_k`; the
/// entropy term is `alpha * sum_k log pi_k`. Returns (loss, gradient,
/// per-dimension action gradients `rows x dim`, summed log-probabilities).
#[allow(clippy::too_many_arguments)]
pub fn sac_actor_grad(
    actor: &Mlp,
    q1: &Mlp,
    q2: &Mlp,
    mask: &[f64],
    alpha: f64,
    obs: &[f64],
    rows: usize,
    eps: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let dim = eps.len() / rows;
    let obs_dim = actor.input_dim();
    let cols = q1.output_dim();
    if mask.len() != dim * cols {
        return Err(Error::dim("sac mask", dim * cols, mask.len()));
    }
    let (out, tape) = actor.forward_tape(obs, rows)?;
    let (mean, log_std) = split_heads(&out, dim);
    let mut a = vec![0.0; rows * dim];
    let mut lp = vec![0.0; rows * dim];
    for i in 0..rows * dim {
        a[i] = (mean[i] + log_std[i].exp() * eps[i]).tanh();
        lp[i] = squashed_log_prob(eps[i], log_std[i], a[i]);
    }
    let input = concat_rows(obs, obs_dim, &a, dim);
    let (qmin, head_grads) = min_q_and_action_grads(q1, q2, &input, rows, obs_dim, dim)?;
    let n = rows as f64;
    let mut g_act = vec![0.0; rows * dim];
    for r in 0..rows {
        for k in 0..dim {
            g_act[r * dim + k] = (0..cols)
                .map(|j| mask[k * cols + j] * head_grads[j][r * dim + k])
                .sum();
        }
    }
    let mut loss = 0.0;
    let mut logp_sum = vec![0.0; rows];
    for r in 0..rows {
        logp_sum[r] = lp[r * dim..(r + 1) * dim].iter().sum();
        loss += (alpha * logp_sum[r] - qmin[r * cols..(r + 1) * cols].iter().sum::<f64>()) / n;
    }
    let mut d_mean = vec![0.0; rows * dim];
    let mut d_log_std = vec![0.0; rows * dim];
    for i in 0..rows * dim {
        let one_minus = 1.0 - a[i] * a[i];
        let d_u = alpha * squash_correction_grad(a[i]) - g_act[i] * one_minus;
        d_mean[i] = d_u / n;
        d_log_std[i] = (d_u * log_std[i].exp() * eps[i] - alpha) / n;
    }
    let mut grad = vec![0.0; actor.n_params()];
    actor.backward(&tape, &join_heads(&d_mean, &d_log_std, dim), &mut grad);
    Ok((loss, grad, g_act, logp_sum))
}

/// Per-head squared TD error of one critic against fixed targets.
pub fn critic_loss_grad(q: &Mlp, input: &[f64], rows: usize, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    q.loss_grad(input, rows, |out| {
        let n = rows as f64;
        let loss = out.iter().zip(targets).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / n;
        let d = out.iter().zip(targets).map(|(o, t)| 2.0 * (o - t) / n).collect();
        (loss, d)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub space: CausalActionSpace,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    q1_target: Mlp,
    q2_target: Mlp,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    alpha_opt: Adam,
    log_alpha: Vec<f64>,
    pub target_entropy: f64,
    pub config: SacConfig,
    pub gamma: f64,
    pub buffer: ReplayBuffer,
    pub new_samples: usize,
    pub stats: GradStats,
}

impl SacAgent {
    pub fn new(space: CausalActionSpace, obs_dim: usize, config: SacConfig, gamma: f64, rng: &mut Rng) -> Result<Self> {
        let dim = space.dim();
        let cols = space.n_columns();
        let actor = Mlp::with_output_gain(policy_spec(obs_dim, &config.hidden, dim), 0.01, rng)?;
        let q_spec = NetworkSpec::new(obs_dim + dim, &config.hidden, vec![HeadSpec::new("q", cols)]);
        let q1 = Mlp::new(q_spec.clone(), rng)?;
        let q2 = Mlp::new(q_spec, rng)?;
        Ok(Self {
            actor_opt: Adam::new(actor.n_params(), config.lr),
            q1_opt: Adam::new(q1.n_params(), config.lr),
            q2_opt: Adam::new(q2.n_params(), config.lr),
            alpha_opt: Adam::new(1, config.lr),
            log_alpha: vec![config.init_alpha.ln()],
            target_entropy: -(dim as f64),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            buffer: ReplayBuffer::new(config.buffer),
            space,
            actor,
            q1,
            q2,
            config,
            gamma,
            new_samples: 0,
            stats: GradStats::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha[0].exp()
    }

    pub fn act(&self, obs: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let eps = standard_normal(rng, self.dim());
        Ok(squashed_sample(&self.actor, obs, 1, &eps)?.0)
    }

    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let out = self.actor.forward_one(obs)?;
        Ok(out[..self.dim()].iter().map(|m| m.tanh()).collect())
    }

    pub fn push(&mut self, s: SacSample) {
        self.buffer.push(s);
        self.new_samples += 1;
    }

    /// True once enough new samples arrived and the buffer can fill a batch.
    pub fn ready(&self) -> bool {
        self.new_samples >= self.config.train_trigger && self.buffer.len() >= self.config.batch
    }

    /// Runs the configured number of gradient steps and resets the trigger.
    pub fn train(&mut self, rng: &mut Rng) -> Result<Option<Losses>> {
        if self.buffer.len() < self.config.batch {
            return Ok(None);
        }
        let steps = self.config.updates_per_trigger.unwrap_or(self.config.train_trigger);
        self.new_samples = 0;
        let mut total = Losses::default();
        let mut alpha_sum = 0.0;
        for _ in 0..steps {
            let l = self.update(rng)?;
            total.policy += l.policy / steps as f64;
            total.critic += l.critic / steps as f64;
            alpha_sum += l.alpha.unwrap_or(0.0) / steps as f64;
        }
        total.alpha = Some(alpha_sum);
        Ok(Some(total))
    }

    /// One critic, actor, temperature, and target step on a sampled batch.
    pub fn update(&mut self, rng: &mut Rng) -> Result<Losses> {
        let rows = self.config.batch;
        let dim = self.dim();
        let cols = self.space.n_columns();
        let obs_dim = self.actor.input_dim();
        let idx: Vec<usize> = (0..rows).map(|_| rng.random_range(0..self.buffer.len())).collect();
        let mut obs = Vec::with_capacity(rows * obs_dim);
        let mut next = Vec::with_capacity(rows * obs_dim);
        let mut act = Vec::with_capacity(rows * dim);
        let mut rew = Vec::with_capacity(rows * cols);
        let mut done = Vec::with_capacity(rows);
        for &i in &idx {
            let s = self.buffer.get(i);
            obs.extend_from_slice(&s.obs);
            next.extend_from_slice(&s.next_obs);
            act.extend_from_slice(&s.action);
            rew.extend_from_slice(&s.reward);
            done.push(s.done);
        }
        let alpha = self.alpha();

        let eps = standard_normal(rng, rows * dim);
        let (a_next, lp_next) = squashed_sample(&self.actor, &next, rows, &eps)?;
        let next_in = concat_rows(&next, obs_dim, &a_next, dim);
        let t1 = self.q1_target.forward(&next_in, rows)?;
        let t2 = self.q2_target.forward(&next_in, rows)?;
        let mut y = vec![0.0; rows * cols];
        for r in 0..rows {
            let logp: f64 = lp_next[r * dim..(r + 1) * dim].iter().sum();
            let keep = if done[r] { 0.0 } else { 1.0 };
            for j in 0..cols {
                let i = r * cols + j;
                let soft = t1[i].min(t2[i]) - alpha * logp / cols as f64;
                y[i] = rew[i] + self.gamma * keep * soft;
            }
        }
        let input = concat_rows(&obs, obs_dim, &act, dim);
        let (l1, g1) = critic_loss_grad(&self.q1, &input, rows, &y)?;
        let (l2, g2) = critic_loss_grad(&self.q2, &input, rows, &y)?;
        self.q1_opt.step(self.q1.params_mut(), &g1);
        self.q2_opt.step(self.q2.params_mut(), &g2);

        let eps = standard_normal(rng, rows * dim);
        let mask = self.space.mask();
        let (la, ga, g_act, logp) = sac_actor_grad(&self.actor, &self.q1, &self.q2, &mask, alpha, &obs, rows, &eps)?;
        if !(l1.is_finite() && l2.is_finite() && la.is_finite()) {
            return Err(Error::Numeric(format!(
                "stage {} sac losses critic {l1}/{l2} actor {la}",
                self.space.stage
            )));
        }
        self.actor_opt.step(self.actor.params_mut(), &ga);
        self.stats = GradStats::from_weights(&g_act, dim);

        let g_alpha = -logp.iter().map(|l| l + self.target_entropy).sum::<f64>() / rows as f64;
        self.alpha_opt.step(&mut self.log_alpha, &[g_alpha]);

        self.q1_target.soft_update_from(&self.q1, self.config.tau);
        self.q2_target.soft_update_from(&self.q2, self.config.tau);
        Ok(Losses {
            policy: la,
            critic: 0.5 * (l1 + l2),
            alpha: Some(alpha),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn ring_buffer_overwrites_oldest() {
        let mut b = ReplayBuffer::new(2);
        for i in 0..3 {
            b.push(SacSample {
                obs: vec![i as f64],
                action: vec![],
                reward: vec![],
                next_obs: vec![],
                done: false,
            });
        }
        assert_eq!(b.len(), 2);
        assert_eq!(b.get(0).obs, vec![2.0]);
        assert_eq!(b.get(1).obs, vec![1.0]);
    }

    #[test]
    fn tau_zero_freezes_targets() {
        let mut rng = Rng::seed_from_u64(1);
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let cfg = SacConfig {
            hidden: vec![8],
            batch: 4,
            tau: 0.0,
            ..Default::default()
        };
        let mut agent = SacAgent::new(CausalActionSpace::full(1, &names), 3, cfg, 0.99, &mut rng).unwrap();
        for _ in 0..8 {
            let obs = standard_normal(&mut rng, 3);
            let action = agent.act(&obs, &mut rng).unwrap();
            agent.push(SacSample { obs: obs.clone(), action, reward: vec![1.0], next_obs: obs, done: false });
        }
        let before = (agent.q1_target.clone(), agent.q2_target.clone());
        agent.update(&mut rng).unwrap();
        assert_eq!(before, (agent.q1_target.clone(), agent.q2_target.clone()));
        assert_ne!(before.0, agent.q1);
    }
}
