//! Residual MLP over `(x, t)` with sinusoidal time features.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `z·sigmoid(z)`, smooth to all orders.
    Silu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub time_embed_dim: usize,
    pub hidden_dim: usize,
    pub n_blocks: usize,
    pub activation: Activation,
}

impl Default for MlpArchitecture {
    fn default() -> Self {
        Self { input_dim: 2, time_embed_dim: 32, hidden_dim: 128, n_blocks: 4, activation: Activation::Silu }
    }
}

impl MlpArchitecture {
    pub fn with_width(hidden_dim: usize, n_blocks: usize) -> Self {
        Self { hidden_dim, n_blocks, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != 2 {
            return Err(Error::Config(format!("input_dim must be 2, got {}", self.input_dim)));
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("time_embed_dim must be positive and even, got {}", self.time_embed_dim)));
        }
        if self.hidden_dim == 0 || self.n_blocks == 0 {
            return Err(Error::Config("hidden_dim and n_blocks must be positive".into()));
        }
        Ok(())
    }

    /// Shapes of the parameter matrices, in storage order.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let h = self.hidden_dim;
        let mut s = vec![(self.input_dim, h), (self.time_embed_dim, h), (1, h)];
        for _ in 0..self.n_blocks {
            s.extend([(h, h), (1, h), (h, h), (1, h)]);
        }
        s.extend([(h, self.input_dim), (1, self.input_dim)]);
        s
    }

    pub fn n_params(&self) -> usize {
        self.shapes().iter().map(|(r, c)| r * c).sum()
    }

    /// Fan-in scaled Gaussian weights and zero biases. The output layer is
    /// zeroed when `zero_output` is set.
    pub fn init_params(&self, seed: u64, zero_output: bool) -> Vec<f64> {
        let mut r = rng::stream(seed, 0x1417);
        let shapes = self.shapes();
        let last_w = shapes.len() - 2;
        let mut out = Vec::with_capacity(self.n_params());
        for (k, &(rows, cols)) in shapes.iter().enumerate() {
            let bias = rows == 1;
            let zero = bias || (zero_output && k == last_w);
            let fan_in = if k == 1 { self.time_embed_dim } else { rows } as f64;
            let std = 1.0 / fan_in.sqrt();
            for _ in 0..rows * cols {
                out.push(if zero { 0.0 } else { std * rng::normal(&mut r) });
            }
        }
        out
    }

    /// Places the flat parameter vector on the tape.
    pub fn load(&self, tape: &mut Tape, params: &[f64], differentiable: bool) -> Vec<Var> {
        let mut off = 0;
        self.shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let a = ArrayView2::from_shape((rows, cols), &params[off..off + rows * cols]).expect("layout").to_owned();
                off += rows * cols;
                if differentiable {
                    tape.variable(a)
                } else {
                    tape.constant(a)
                }
            })
            .collect()
    }

    /// Network output `s_θ(x, t)` for a batch (`x` is `B×2`, `temb` is `B×E`).
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var, temb: Var) -> Var {
        let hx = tape.matmul(x, p[0]);
        let ht = tape.matmul(temb, p[1]);
        let h = tape.add(hx, ht);
        let mut h = tape.add_row(h, p[2]);
        for b in 0..self.n_blocks {
            let q = &p[3 + 4 * b..7 + 4 * b];
            let a = tape.silu(h);
            let z = tape.matmul(a, q[0]);
            let z = tape.add_row(z, q[1]);
            let a = tape.silu(z);
            let z = tape.matmul(a, q[2]);
            let z = tape.add_row(z, q[3]);
            h = tape.add(h, z);
        }
        let k = 3 + 4 * self.n_blocks;
        let a = tape.silu(h);
        let o = tape.matmul(a, p[k]);
        tape.add_row(o, p[k + 1])
    }

    /// Sinusoidal features of `t/T`, one row per level in `ts`.
    pub fn time_embedding(&self, ts: &[usize], steps: usize) -> Array2<f64> {
        let half = self.time_embed_dim / 2;
        let mut e = Array2::zeros((ts.len(), self.time_embed_dim));
        for (r, &t) in ts.iter().enumerate() {
            let tau = t as f64 / steps as f64;
            for k in 0..half {
                let w = if half > 1 { (k as f64 / (half - 1) as f64 * 200f64.ln()).exp() } else { 1.0 };
                e[[r, 2 * k]] = (w * tau).sin();
                e[[r, 2 * k + 1]] = (w * tau).cos();
            }
        }
        e
    }
}
