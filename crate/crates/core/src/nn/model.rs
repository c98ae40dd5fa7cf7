use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::model::{no_energy, ScoreModel};
use crate::nn::mlp::MlpArchitecture;
use crate::nn::tape::{Tape, Var};
use crate::schedule::NoiseSchedule;

/// How the network output `s_θ(x, t)` defines the noise prediction `ε_θ`.
///
/// Energy variants define a scalar `f_θ`, expose `log p_t ≈ f_θ/σ_t`, and
/// set `ε_θ = −∇_x f_θ`, so that `score = −ε_θ/σ_t` in every case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Parameterization {
    /// `ε_θ = s_θ`; score only.
    Epsilon,
    /// `f = −½‖s_θ‖²`.
    EnergyL2,
    /// `f = −½‖x − s_θ‖²`.
    EnergyDae,
    /// `f = xᵀ s_θ`.
    EnergyIp,
}

impl Parameterization {
    pub const ALL: [Parameterization; 4] =
        [Parameterization::Epsilon, Parameterization::EnergyL2, Parameterization::EnergyDae, Parameterization::EnergyIp];

    pub fn has_energy(self) -> bool {
        self != Parameterization::Epsilon
    }

    pub fn tag(self) -> u8 {
        match self {
            Parameterization::Epsilon => 0,
            Parameterization::EnergyL2 => 1,
            Parameterization::EnergyDae => 2,
            Parameterization::EnergyIp => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.tag() == tag)
    }

    /// Whether a zero output layer is a usable starting point. Under the L2
    /// energy both `s_θ` and its Jacobian vanish there, so no gradient flows.
    pub fn zero_init_output(self) -> bool {
        self != Parameterization::EnergyL2
    }
}

/// A residual-MLP diffusion model.
#[derive(Clone)]
pub struct NeuralModel {
    name: String,
    arch: MlpArchitecture,
    parameterization: Parameterization,
    params: Vec<f64>,
    schedule: NoiseSchedule,
}

impl fmt::Debug for NeuralModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NeuralModel")
            .field("name", &self.name)
            .field("arch", &self.arch)
            .field("parameterization", &self.parameterization)
            .field("n_params", &self.params.len())
            .finish()
    }
}

/// Tape nodes produced by one batched evaluation.
pub struct Evaluation {
    /// `ε_θ`, `B×2`.
    pub eps: Var,
    /// `f_θ` per row (`B×1`), for energy parameterizations.
    pub energy: Option<Var>,
}

impl NeuralModel {
    /// Freshly initialized model.
    pub fn new(
        name: impl Into<String>,
        arch: MlpArchitecture,
        parameterization: Parameterization,
        schedule: NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        let params = arch.init_params(seed, parameterization.zero_init_output());
        Ok(Self { name: name.into(), arch, parameterization, params, schedule })
    }

    pub fn from_params(
        name: impl Into<String>,
        arch: MlpArchitecture,
        parameterization: Parameterization,
        schedule: NoiseSchedule,
        params: Vec<f64>,
    ) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.n_params() {
            return Err(Error::Config(format!(
                "architecture needs {} parameters, got {}",
                arch.n_params(),
                params.len()
            )));
        }
        Ok(Self { name: name.into(), arch, parameterization, params, schedule })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Builds `ε_θ` (and `f_θ`) for rows `x` at per-row levels `ts`. `x` must
    /// be a differentiable tape variable for energy parameterizations.
    pub fn evaluate(&self, tape: &mut Tape, p: &[Var], x: Var, ts: &[usize]) -> Evaluation {
        let temb = tape.constant(self.arch.time_embedding(ts, self.schedule.steps()));
        let s = self.arch.forward(tape, p, x, temb);
        let f = match self.parameterization {
            Parameterization::Epsilon => return Evaluation { eps: s, energy: None },
            Parameterization::EnergyL2 => {
                let sq = tape.mul(s, s);
                let r = tape.sum_cols(sq);
                tape.scale(r, -0.5)
            }
            Parameterization::EnergyDae => {
                let d = tape.sub(x, s);
                let sq = tape.mul(d, d);
                let r = tape.sum_cols(sq);
                tape.scale(r, -0.5)
            }
            Parameterization::EnergyIp => {
                let xs = tape.mul(x, s);
                tape.sum_cols(xs)
            }
        };
        let total = tape.sum_all(f);
        let gx = tape.grad(total, &[x])[0];
        let eps = tape.scale(gx, -1.0);
        Evaluation { eps, energy: Some(f) }
    }

    fn input(&self, xs: &[Vec2]) -> Array2<f64> {
        Array2::from_shape_fn((xs.len(), 2), |(i, d)| xs[i][d])
    }

    /// `ε_θ` and (for energy models) `f_θ` at level `t`.
    pub fn eps_and_energy(&self, xs: &[Vec2], t: usize) -> Result<(Vec<Vec2>, Option<Vec<f64>>)> {
        self.check_level(t)?;
        if xs.is_empty() {
            return Ok((Vec::new(), self.parameterization.has_energy().then(Vec::new)));
        }
        let mut tape = Tape::new();
        let p = self.arch.load(&mut tape, &self.params, false);
        let x = if self.parameterization.has_energy() {
            tape.variable(self.input(xs))
        } else {
            tape.constant(self.input(xs))
        };
        let ts = vec![t; xs.len()];
        let ev = self.evaluate(&mut tape, &p, x, &ts);
        let e = tape.value(ev.eps);
        let eps = (0..xs.len()).map(|i| [e[[i, 0]], e[[i, 1]]]).collect();
        let f = ev.energy.map(|f| tape.value(f).column(0).to_vec());
        Ok((eps, f))
    }

    pub fn forward_eps(&self, xs: &[Vec2], t: usize) -> Result<Vec<Vec2>> {
        Ok(self.eps_and_energy(xs, t)?.0)
    }

    /// The potential `f_θ(x, t)`.
    pub fn potential(&self, xs: &[Vec2], t: usize) -> Result<Vec<f64>> {
        if !self.parameterization.has_energy() {
            return Err(no_energy(&self.describe()));
        }
        Ok(self.eps_and_energy(xs, t)?.1.expect("energy parameterization"))
    }
}

impl ScoreModel for NeuralModel {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn has_energy(&self) -> bool {
        self.parameterization.has_energy()
    }

    fn score(&self, xs: &[Vec2], t: usize) -> Result<Vec<Vec2>> {
        let (eps, _) = self.eps_and_energy(xs, t)?;
        let k = -1.0 / self.schedule.sigma(t);
        Ok(eps.into_iter().map(|e| [k * e[0], k * e[1]]).collect())
    }

    fn energy_and_score(&self, xs: &[Vec2], t: usize) -> Result<(Vec<f64>, Vec<Vec2>)> {
        if !self.has_energy() {
            return Err(no_energy(&self.describe()));
        }
        let (eps, f) = self.eps_and_energy(xs, t)?;
        let sigma = self.schedule.sigma(t);
        let score = eps.into_iter().map(|e| [-e[0] / sigma, -e[1] / sigma]).collect();
        let energy = f.expect("energy parameterization").into_iter().map(|v| v / sigma).collect();
        Ok((energy, score))
    }

    fn describe(&self) -> String {
        format!("{}:mlp[{:?}]", self.name, self.parameterization)
    }
}
