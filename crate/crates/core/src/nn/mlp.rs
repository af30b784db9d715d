use std::ops::Range;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::gaussian::{LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Heads with this name are clamped to the log-std range after the forward pass.
pub const LOG_STD_HEAD: &str = "log_std";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub dim: usize,
}

impl HeadSpec {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            name: name.to_string(),
            dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub heads: Vec<HeadSpec>,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: &[usize], heads: Vec<HeadSpec>) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            activation: Activation::Tanh,
            heads,
        }
    }

    /// `(mean, dim)` and `(log_std, dim)` heads.
    pub fn gaussian(input_dim: usize, hidden: &[usize], dim: usize) -> Self {
        Self::new(
            input_dim,
            hidden,
            vec![HeadSpec::new("mean", dim), HeadSpec::new(LOG_STD_HEAD, dim)],
        )
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("network input_dim must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        if self.heads.is_empty() || self.heads.iter().any(|h| h.dim == 0) {
            return Err(Error::Config("network needs heads with dim >= 1".into()));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.heads.iter().map(|h| h.dim).sum()
    }

    pub fn head_range(&self, name: &str) -> Option<Range<usize>> {
        let mut start = 0;
        for h in &self.heads {
            if h.name == name {
                return Some(start..start + h.dim);
            }
            start += h.dim;
        }
        None
    }

    /// (fan_in, fan_out) of every dense layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim()));
        dims
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Forward-pass record needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    rows: usize,
    /// input of every layer, `rows x fan_in`
    inputs: Vec<Vec<f64>>,
    /// output positions pinned by the log-std clamp
    clamped: Vec<bool>,
}

impl Tape {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Dense network whose parameters live in one flat vector. Each layer stores a
/// row-major `fan_in x fan_out` weight block followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: NetworkSpec,
    params: Vec<f64>,
}

impl Mlp {
    /// Orthogonal hidden layers with gain sqrt(2), output layer with gain 1.
    pub fn new(spec: NetworkSpec, rng: &mut Rng) -> Result<Self> {
        Self::with_output_gain(spec, 1.0, rng)
    }

    pub fn with_output_gain(spec: NetworkSpec, out_gain: f64, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let mut params = Vec::with_capacity(spec.n_params());
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let gain = if l + 1 == dims.len() {
                out_gain
            } else {
                std::f64::consts::SQRT_2
            };
            params.extend(orthogonal(fan_in, fan_out, gain, rng));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.n_params() {
            return Err(Error::dim("network parameters", spec.n_params(), params.len()));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Polyak update `self = tau * src + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, src: &Mlp, tau: f64) {
        assert_eq!(self.params.len(), src.params.len());
        if tau == 0.0 {
            return;
        }
        for (p, s) in self.params.iter_mut().zip(&src.params) {
            *p = tau * s + (1.0 - tau) * *p;
        }
    }

    fn check_input(&self, x: &[f64], rows: usize) -> Result<()> {
        if rows == 0 || x.len() != rows * self.spec.input_dim {
            return Err(Error::dim(
                "network input",
                rows.max(1) * self.spec.input_dim,
                x.len(),
            ));
        }
        Ok(())
    }

    /// Batch forward pass without recording; returns `rows x output_dim`.
    pub fn forward(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.check_input(x, rows)?;
        Ok(self.run(x, rows, None).0)
    }

    /// Forward pass of a single input row.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x, 1)
    }

    /// Batch forward pass that records what the backward pass needs.
    pub fn forward_tape(&self, x: &[f64], rows: usize) -> Result<(Vec<f64>, Tape)> {
        self.check_input(x, rows)?;
        let mut inputs = Vec::with_capacity(self.spec.hidden.len() + 1);
        let (out, clamped) = self.run(x, rows, Some(&mut inputs));
        Ok((
            out,
            Tape {
                rows,
                inputs,
                clamped,
            },
        ))
    }

    fn run(&self, x: &[f64], rows: usize, mut record: Option<&mut Vec<Vec<f64>>>) -> (Vec<f64>, Vec<bool>) {
        let dims = self.spec.layer_dims();
        let last = dims.len() - 1;
        let mut a = x.to_vec();
        let mut off = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let mut z = Vec::with_capacity(rows * fan_out);
            for _ in 0..rows {
                z.extend_from_slice(b);
            }
            // SAFETY: slice lengths match the declared shapes and strides.
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    fan_in,
                    fan_out,
                    1.0,
                    a.as_ptr(),
                    fan_in as isize,
                    1,
                    w.as_ptr(),
                    fan_out as isize,
                    1,
                    1.0,
                    z.as_mut_ptr(),
                    fan_out as isize,
                    1,
                );
            }
            if l < last {
                match self.spec.activation {
                    Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
                    Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                }
            }
            if let Some(rec) = record.as_deref_mut() {
                rec.push(std::mem::replace(&mut a, z));
            } else {
                a = z;
            }
        }
        let clamped = self.clamp_log_std(&mut a, rows);
        (a, clamped)
    }

    fn clamp_log_std(&self, out: &mut [f64], rows: usize) -> Vec<bool> {
        let width = self.spec.output_dim();
        let mut clamped = vec![false; out.len()];
        let Some(range) = self.spec.head_range(LOG_STD_HEAD) else {
            return clamped;
        };
        for r in 0..rows {
            for c in range.clone() {
                let i = r * width + c;
                let v = out[i];
                if v < LOG_STD_MIN || v > LOG_STD_MAX {
                    out[i] = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
                    clamped[i] = true;
                }
            }
        }
        clamped
    }

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(outputs) and
    /// returns d(loss)/d(inputs) (`rows x input_dim`).
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let rows = tape.rows;
        let dims = self.spec.layer_dims();
        assert_eq!(d_out.len(), rows * self.spec.output_dim(), "output gradient shape");
        assert_eq!(grad.len(), self.params.len(), "gradient buffer shape");
        let mut delta: Vec<f64> = d_out
            .iter()
            .zip(&tape.clamped)
            .map(|(d, &c)| if c { 0.0 } else { *d })
            .collect();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(i, o) in &dims {
            offsets.push(off);
            off += i * o + o;
        }
        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            let off = offsets[l];
            let a = &tape.inputs[l];
            {
                let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                // SAFETY: shapes as declared; gw is fan_in x fan_out row-major.
                unsafe {
                    matrixmultiply::dgemm(
                        fan_in,
                        rows,
                        fan_out,
                        1.0,
                        a.as_ptr(),
                        1,
                        fan_in as isize,
                        delta.as_ptr(),
                        fan_out as isize,
                        1,
                        1.0,
                        gw.as_mut_ptr(),
                        fan_out as isize,
                        1,
                    );
                }
                for r in 0..rows {
                    let d = &delta[r * fan_out..(r + 1) * fan_out];
                    for (g, v) in gb.iter_mut().zip(d) {
                        *g += v;
                    }
                }
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut da = vec![0.0; rows * fan_in];
            // SAFETY: w read transposed via strides (1, fan_out).
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    fan_out,
                    fan_in,
                    1.0,
                    delta.as_ptr(),
                    fan_out as isize,
                    1,
                    w.as_ptr(),
                    1,
                    fan_out as isize,
                    0.0,
                    da.as_mut_ptr(),
                    fan_in as isize,
                    1,
                );
            }
            if l > 0 {
                match self.spec.activation {
                    Activation::Tanh => da.iter_mut().zip(a).for_each(|(d, y)| *d *= 1.0 - y * y),
                    Activation::Relu => da.iter_mut().zip(a).for_each(|(d, y)| {
                        if *y <= 0.0 {
                            *d = 0.0
                        }
                    }),
                }
            }
            delta = da;
        }
        delta
    }

    /// Gradient of a loss over a batch. `loss` maps outputs to (loss, d_outputs).
    pub fn loss_grad<F>(&self, x: &[f64], rows: usize, loss: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnOnce(&[f64]) -> (f64, Vec<f64>),
    {
        let (out, tape) = self.forward_tape(x, rows)?;
        let (value, d_out) = loss(&out);
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&tape, &d_out, &mut grad);
        Ok((value, grad))
    }
}

/// One Adam step on the batch loss. Returns the loss before the update.
pub fn train_step<F>(net: &mut Mlp, opt: &mut Adam, x: &[f64], rows: usize, loss: F) -> Result<f64>
where
    F: FnOnce(&[f64]) -> (f64, Vec<f64>),
{
    let (value, grad) = net.loss_grad(x, rows, loss)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {value} on a batch of {rows} rows"
        )));
    }
    opt.step(&mut net.params, &grad);
    Ok(value)
}

/// `fan_in x fan_out` row-major block with orthonormal rows or columns,
/// scaled by `gain`.
fn orthogonal(fan_in: usize, fan_out: usize, gain: f64, rng: &mut Rng) -> Vec<f64> {
    let mut w = vec![0.0; fan_in * fan_out];
    if gain == 0.0 {
        return w;
    }
    let (n_vec, len) = if fan_in >= fan_out {
        (fan_out, fan_in)
    } else {
        (fan_in, fan_out)
    };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while basis.len() < n_vec {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for u in &basis {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    for (k, v) in basis.iter().enumerate() {
        for (i, x) in v.iter().enumerate() {
            let (r, c) = if fan_in >= fan_out { (i, k) } else { (k, i) };
            w[r * fan_out + c] = gain * x;
        }
    }
    w
}
