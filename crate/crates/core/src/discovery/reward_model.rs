use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::dataset::{DataRow, InterventionDataset, Regime};
use crate::error::{Error, Result};
use crate::nn::{
    gaussian_kl, gaussian_nll, gaussian_nll_grad, train_step, Adam, GaussianPrediction, Mlp,
    NetworkSpec,
};
use crate::rng::Rng;

const SCALE_FLOOR: f64 = 1e-8;

/// Which side of the KL is the random-action prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// KL(P_random || P_do)
    #[default]
    RandomVsDo,
    /// KL(P_do || P_random)
    DoVsRandom,
}

impl KlDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            KlDirection::RandomVsDo => "random_vs_do",
            KlDirection::DoVsRandom => "do_vs_random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            epochs: 100,
            lr: 5e-4,
            batch: 32,
        }
    }
}

/// Per-feature affine standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &[f64], dim: usize) -> Self {
        let n = (data.len() / dim).max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in data.chunks(dim) {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x / n);
        }
        let mut var = vec![0.0; dim];
        for row in data.chunks(dim) {
            for i in 0..dim {
                var[i] += (row[i] - mean[i]).powi(2) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v.sqrt() > SCALE_FLOOR { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, data: &mut [f64]) {
        let dim = self.mean.len();
        for row in data.chunks_mut(dim) {
            for i in 0..dim {
                row[i] = (row[i] - self.mean[i]) / self.scale[i];
            }
        }
    }
}

/// Gaussian regressor of one reward term from (state, action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    /// (action index k, reward index j within the stage)
    pub pair: (usize, usize),
    pub net: Mlp,
    pub inputs: Standardizer,
    pub target: Standardizer,
    /// mean NLL over the last epoch, in reward units
    pub final_loss: f64,
}

fn features(rows: &[&DataRow]) -> Vec<f64> {
    let mut x = Vec::with_capacity(rows.len() * (rows[0].state.len() + rows[0].action.len()));
    for r in rows {
        x.extend_from_slice(&r.state);
        x.extend_from_slice(&r.action);
    }
    x
}

fn nll_batch(out: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let n = y.len() as f64;
    let mut loss = 0.0;
    let mut d = vec![0.0; out.len()];
    for (r, t) in y.iter().enumerate() {
        let (m, s) = (out[2 * r], out[2 * r + 1]);
        loss += gaussian_nll(m, s, *t);
        let (gm, gs) = gaussian_nll_grad(m, s, *t);
        d[2 * r] = gm / n;
        d[2 * r + 1] = gs / n;
    }
    (loss / n, d)
}

/// Fits P(r_j | s, a) on D_do ∪ D_random by minimising the mean Gaussian NLL.
pub fn train_reward_model(
    pair: (usize, usize),
    d_do: &InterventionDataset,
    d_random: &InterventionDataset,
    settings: &ModelSettings,
    seed: u64,
) -> Result<RewardModel> {
    if d_do.is_empty() || d_random.is_empty() {
        return Err(Error::Domain("reward model needs non-empty datasets".into()));
    }
    if d_do.stage != d_random.stage {
        return Err(Error::Domain(format!(
            "reward model datasets come from stages {} and {}",
            d_do.stage, d_random.stage
        )));
    }
    if settings.batch == 0 || settings.epochs == 0 {
        return Err(Error::Config("batch and epochs must be > 0".into()));
    }
    let (k, j) = pair;
    if j >= d_random.dims.reward {
        return Err(Error::Index {
            what: "reward term",
            index: j,
            max: d_random.dims.reward,
        });
    }
    if k >= d_random.dims.action {
        return Err(Error::Index {
            what: "action",
            index: k,
            max: d_random.dims.action,
        });
    }
    let rows: Vec<&DataRow> = d_do.rows.iter().chain(&d_random.rows).collect();
    let dim = d_random.dims.state + d_random.dims.action;
    let mut x = features(&rows);
    let mut y: Vec<f64> = rows.iter().map(|r| r.reward[j]).collect();
    let inputs = Standardizer::fit(&x, dim);
    inputs.apply(&mut x);
    let target = Standardizer::fit(&y, 1);
    target.apply(&mut y);

    let mut rng = Rng::seed_from_u64(seed);
    let spec = NetworkSpec::gaussian(dim, &settings.hidden, 1);
    let mut net = Mlp::new(spec, &mut rng)?;
    let mut opt = Adam::new(net.n_params(), settings.lr);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut xb = Vec::with_capacity(settings.batch * dim);
    let mut yb = Vec::with_capacity(settings.batch);
    let mut last_epoch = 0.0;
    for _ in 0..settings.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(settings.batch) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(&x[i * dim..(i + 1) * dim]);
                yb.push(y[i]);
            }
            let l = train_step(&mut net, &mut opt, &xb, chunk.len(), |o| nll_batch(o, &yb))?;
            total += l * chunk.len() as f64;
        }
        last_epoch = total / rows.len() as f64;
    }
    Ok(RewardModel {
        pair,
        net,
        inputs,
        final_loss: last_epoch + target.scale[0].ln(),
        target,
    })
}

impl RewardModel {
    /// Predictions in standardized target units, one per row.
    pub fn predict_standardized(&self, rows: &[(&[f64], &[f64])]) -> Result<Vec<GaussianPrediction>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let dim = self.inputs.mean.len();
        let mut x = Vec::with_capacity(rows.len() * dim);
        for (s, a) in rows {
            x.extend_from_slice(s);
            x.extend_from_slice(a);
        }
        if x.len() != rows.len() * dim {
            return Err(Error::dim("reward model input", rows.len() * dim, x.len()));
        }
        self.inputs.apply(&mut x);
        let out = self.net.forward(&x, rows.len())?;
        Ok(out
            .chunks(2)
            .map(|c| GaussianPrediction {
                mean: c[0],
                log_std: c[1],
            })
            .collect())
    }

    /// Prediction in reward units.
    pub fn predict(&self, state: &[f64], action: &[f64]) -> Result<GaussianPrediction> {
        let p = self.predict_standardized(&[(state, action)])?[0];
        Ok(GaussianPrediction {
            mean: p.mean * self.target.scale[0] + self.target.mean[0],
            log_std: p.log_std + self.target.scale[0].ln(),
        })
    }

    /// Mean NLL of the reward term over a dataset, in reward units.
    pub fn mean_nll(&self, data: &InterventionDataset) -> Result<f64> {
        let j = self.pair.1;
        let rows: Vec<(&[f64], &[f64])> = data
            .rows
            .iter()
            .map(|r| (r.state.as_slice(), r.action.as_slice()))
            .collect();
        let preds = self.predict_standardized(&rows)?;
        let ln_scale = self.target.scale[0].ln();
        let total: f64 = preds
            .iter()
            .zip(&data.rows)
            .map(|(p, r)| {
                let y = (r.reward[j] - self.target.mean[0]) / self.target.scale[0];
                gaussian_nll(p.mean, p.log_std, y) + ln_scale
            })
            .sum();
        Ok(total / data.len().max(1) as f64)
    }
}

/// Mean over the inference rows of the KL between the model's prediction with
/// the recorded action and with action `k` set to zero.
pub fn kld_for_pair(
    model: &RewardModel,
    inference: &InterventionDataset,
    direction: KlDirection,
) -> Result<f64> {
    if inference.is_empty() {
        return Err(Error::Domain("empty inference set".into()));
    }
    if matches!(inference.regime, Regime::DoZero { .. }) {
        return Err(Error::Domain("inference data must not be intervened".into()));
    }
    let k = model.pair.0;
    let zeroed: Vec<Vec<f64>> = inference
        .rows
        .iter()
        .map(|r| {
            let mut a = r.action.clone();
            a[k] = 0.0;
            a
        })
        .collect();
    let random: Vec<(&[f64], &[f64])> = inference
        .rows
        .iter()
        .map(|r| (r.state.as_slice(), r.action.as_slice()))
        .collect();
    let intervened: Vec<(&[f64], &[f64])> = inference
        .rows
        .iter()
        .zip(&zeroed)
        .map(|(r, a)| (r.state.as_slice(), a.as_slice()))
        .collect();
    let p2 = model.predict_standardized(&random)?;
    let p1 = model.predict_standardized(&intervened)?;
    let total: f64 = p2
        .iter()
        .zip(&p1)
        .map(|(p2, p1)| match direction {
            KlDirection::RandomVsDo => gaussian_kl(p2, p1),
            KlDirection::DoVsRandom => gaussian_kl(p1, p2),
        })
        .sum();
    Ok(total / inference.len() as f64)
}
