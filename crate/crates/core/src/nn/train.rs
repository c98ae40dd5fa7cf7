//! Denoising score matching with Adam.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::model::ScoreModel;
use crate::nn::model::NeuralModel;
use crate::nn::tape::Tape;
use crate::rng::{self, ChainRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// Maximum global gradient norm.
    pub clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 15_000,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            clip: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.beta1, self.beta2, self.eps_adam, self.clip];
        if self.batch_size == 0 || positive.iter().any(|v| !(*v > 0.0)) || self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// Noised inputs `x_t = √ᾱ_t x_0 + σ_t ε`, one level per row.
fn noised(m: &NeuralModel, x0: &[Vec2], ts: &[usize], noise: &[Vec2]) -> Result<Array2<f64>> {
    if x0.len() != ts.len() || x0.len() != noise.len() || x0.is_empty() {
        return Err(Error::Argument("loss batch, levels and noise must have equal non-zero length".into()));
    }
    let s = m.schedule();
    let mut xt = Array2::zeros((x0.len(), 2));
    for i in 0..x0.len() {
        let (a, b) = s.marginal_coeffs(ts[i])?;
        for d in 0..2 {
            xt[[i, d]] = a * x0[i][d] + b * noise[i][d];
        }
    }
    Ok(xt)
}

fn loss_on_tape(m: &NeuralModel, x0: &[Vec2], ts: &[usize], noise: &[Vec2], with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let xt = noised(m, x0, ts, noise)?;
    let mut tape = Tape::new();
    let p = m.arch().load(&mut tape, m.params(), with_grad);
    let x = if m.parameterization().has_energy() { tape.variable(xt) } else { tape.constant(xt) };
    let ev = m.evaluate(&mut tape, &p, x, ts);
    let target = tape.constant(Array2::from_shape_fn((noise.len(), 2), |(i, d)| noise[i][d]));
    let r = tape.sub(target, ev.eps);
    let sq = tape.mul(r, r);
    let total = tape.sum_all(sq);
    let loss = tape.scale(total, 1.0 / x0.len() as f64);
    let value = tape.scalar(loss);
    if !with_grad {
        return Ok((value, None));
    }
    let grads = tape.grad(loss, &p);
    let mut flat = Vec::with_capacity(m.params().len());
    for g in grads {
        flat.extend(tape.value(g).iter());
    }
    Ok((value, Some(flat)))
}

/// Mean of `‖ε − ε_θ(x_t, t)‖²` over the batch.
pub fn dsm_loss(m: &NeuralModel, x0: &[Vec2], ts: &[usize], noise: &[Vec2]) -> Result<f64> {
    Ok(loss_on_tape(m, x0, ts, noise, false)?.0)
}

/// The loss and its gradient with respect to the flat parameter vector.
pub fn dsm_loss_and_grad(m: &NeuralModel, x0: &[Vec2], ts: &[usize], noise: &[Vec2]) -> Result<(f64, Vec<f64>)> {
    let (l, g) = loss_on_tape(m, x0, ts, noise, true)?;
    Ok((l, g.expect("gradient requested")))
}

/// Adam optimizer state.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps_adam,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Rescales `g` in place to have norm at most `max`; returns the original norm.
pub fn clip_norm(g: &mut [f64], max: f64) -> f64 {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max {
        let k = max / norm;
        g.iter_mut().for_each(|v| *v *= k);
    }
    norm
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean loss over the `window` iterations ending at `end` (exclusive).
    pub fn smoothed(&self, end: usize, window: usize) -> f64 {
        let end = end.min(self.losses.len());
        let start = end.saturating_sub(window);
        let s = &self.losses[start..end];
        s.iter().sum::<f64>() / s.len().max(1) as f64
    }
}

/// Trains `m` in place. Each iteration draws a batch from `data`, one uniform
/// level per example and fresh noise, then takes one clipped Adam step.
pub fn train<F>(m: &mut NeuralModel, mut data: F, cfg: &TrainConfig) -> Result<TrainReport>
where
    F: FnMut(&mut ChainRng) -> Vec2,
{
    cfg.validate()?;
    let steps = m.schedule().steps();
    let mut r = rng::stream(cfg.seed, 0);
    let mut opt = Adam::new(m.params().len(), cfg);
    let mut report = TrainReport { losses: Vec::with_capacity(cfg.iterations) };
    let mut x0 = Vec::with_capacity(cfg.batch_size);
    let mut ts = Vec::with_capacity(cfg.batch_size);
    let mut noise = Vec::with_capacity(cfg.batch_size);
    for it in 0..cfg.iterations {
        x0.clear();
        ts.clear();
        noise.clear();
        for _ in 0..cfg.batch_size {
            x0.push(data(&mut r));
            ts.push(r.random_range(1..=steps));
            noise.push(rng::normal2(&mut r));
        }
        let (loss, mut grad) = dsm_loss_and_grad(m, &x0, &ts, &noise)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let mut hist = [0usize; 10];
            for t in &ts {
                hist[((t - 1) * 10 / steps).min(9)] += 1;
            }
            let pnorm = m.params().iter().map(|v| v * v).sum::<f64>().sqrt();
            return Err(Error::Numeric(format!(
                "non-finite loss {loss} at iteration {it}; level histogram (10 bins) {hist:?}; parameter norm {pnorm:.6e}"
            )));
        }
        clip_norm(&mut grad, cfg.clip);
        opt.update(m.params_mut(), &grad);
        report.losses.push(loss);
        if (it + 1) % 1000 == 0 {
            log::info!("iteration {} loss {:.5} (smoothed {:.5})", it + 1, loss, report.smoothed(it + 1, 200));
        }
    }
    Ok(report)
}
