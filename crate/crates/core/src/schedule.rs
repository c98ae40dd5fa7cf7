//! Discrete noise schedules and the coefficients derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Vec2};

/// How a schedule was constructed; this is also its serialized form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    /// Linearly spaced betas. Missing endpoints default to `1e-4·1000/T` and
    /// `0.02·1000/T`.
    Linear {
        steps: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta_min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta_max: Option<f64>,
    },
    /// Squared-cosine profile with offset 0.008 and beta clamp 0.999.
    Cosine { steps: usize },
    Custom { betas: Vec<f64> },
}

impl ScheduleSpec {
    pub fn steps(&self) -> usize {
        match self {
            ScheduleSpec::Linear { steps, .. } | ScheduleSpec::Cosine { steps } => *steps,
            ScheduleSpec::Custom { betas } => betas.len(),
        }
    }
}

const COSINE_OFFSET: f64 = 0.008;
const COSINE_MAX_BETA: f64 = 0.999;

/// Default linear endpoints for `steps` diffusion steps.
pub fn default_linear_endpoints(steps: usize) -> (f64, f64) {
    let scale = 1000.0 / steps.max(1) as f64;
    let hi = (0.02 * scale).min(COSINE_MAX_BETA);
    let lo = (1e-4 * scale).min(hi);
    (lo, hi)
}

/// Coefficients of a `T`-step Gaussian diffusion, indexed by `t ∈ 1..=T`.
///
/// Immutable after construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigma2s: Vec<f64>,
    reverse_vars: Vec<f64>,
}

impl TryFrom<ScheduleSpec> for NoiseSchedule {
    type Error = Error;

    fn try_from(spec: ScheduleSpec) -> Result<Self> {
        NoiseSchedule::from_spec(&spec)
    }
}

impl From<NoiseSchedule> for ScheduleSpec {
    fn from(s: NoiseSchedule) -> Self {
        s.spec
    }
}

impl NoiseSchedule {
    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        let mut s = match spec {
            ScheduleSpec::Linear { steps, beta_min, beta_max } => {
                let (lo, hi) = default_linear_endpoints(*steps);
                Self::linear(*steps, beta_min.unwrap_or(lo), beta_max.unwrap_or(hi))?
            }
            ScheduleSpec::Cosine { steps } => Self::cosine(*steps)?,
            ScheduleSpec::Custom { betas } => Self::from_betas(betas.clone())?,
        };
        s.spec = spec.clone();
        Ok(s)
    }

    /// Linear schedule with the default endpoints for `steps`.
    pub fn linear_default(steps: usize) -> Result<Self> {
        let (lo, hi) = default_linear_endpoints(steps);
        let mut s = Self::linear(steps, lo, hi)?;
        s.spec = ScheduleSpec::Linear { steps, beta_min: None, beta_max: None };
        Ok(s)
    }

    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::Config("schedule steps must be at least 1".into()));
        }
        if !(beta_min > 0.0 && beta_min.is_finite()) {
            return Err(Error::Config(format!("beta_min must lie in (0, beta_max], got {beta_min}")));
        }
        if !(beta_max >= beta_min && beta_max <= 1.0) {
            return Err(Error::Config(format!(
                "beta_max must lie in [beta_min, 1], got {beta_max} (beta_min = {beta_min})"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_min]
        } else {
            (0..steps)
                .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        let mut s = Self::build(betas)?;
        s.spec = ScheduleSpec::Linear { steps, beta_min: Some(beta_min), beta_max: Some(beta_max) };
        Ok(s)
    }

    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 1 {
            return Err(Error::Config("schedule steps must be at least 1".into()));
        }
        let profile = |t: usize| {
            let u = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
            (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let f0 = profile(0);
        let betas = (1..=steps)
            .map(|t| {
                let prev = profile(t - 1) / f0;
                let cur = profile(t) / f0;
                (1.0 - cur / prev).clamp(f64::MIN_POSITIVE, COSINE_MAX_BETA)
            })
            .collect();
        let mut s = Self::build(betas)?;
        s.spec = ScheduleSpec::Cosine { steps };
        Ok(s)
    }

    /// Schedule from an explicit beta sequence `β_1..β_T`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        let mut s = Self::build(betas)?;
        s.spec = ScheduleSpec::Custom { betas: s.betas.clone() };
        Ok(s)
    }

    fn build(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one beta".into()));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, b)| !(**b > 0.0 && **b <= 1.0)) {
            return Err(Error::Config(format!("beta_{} = {b} outside (0, 1]", i + 1)));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut running = 1.0;
        for a in &alphas {
            running *= a;
            alpha_bars.push(running);
        }
        let sigma2s: Vec<f64> = alpha_bars.iter().map(|ab| 1.0 - ab).collect();
        let reverse_vars = (0..betas.len())
            .map(|i| if i == 0 { 0.0 } else { betas[i] * sigma2s[i - 1] / sigma2s[i] })
            .collect();
        Ok(Self {
            spec: ScheduleSpec::Custom { betas: betas.clone() },
            betas,
            alphas,
            alpha_bars,
            sigma2s,
            reverse_vars,
        })
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_level(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::TimeIndex { t, steps: self.steps() })
        } else {
            Ok(())
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// `σ_t² = 1 − ᾱ_t`, with `σ_0² = 0`.
    pub fn sigma2(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.sigma2s[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma2(t).sqrt()
    }

    /// `(√ᾱ_t, √(1−ᾱ_t))`, the coefficients of `x_t = scale·x_0 + sigma·ε`.
    pub fn marginal_coeffs(&self, t: usize) -> Result<(f64, f64)> {
        self.check_level(t)?;
        Ok((self.alpha_bar(t).sqrt(), self.sigma(t)))
    }

    /// Ancestral-step variance `β_t (1−ᾱ_{t−1}) / (1−ᾱ_t)`; zero at `t = 1`.
    pub fn reverse_variance(&self, t: usize) -> f64 {
        self.reverse_vars[t - 1]
    }

    /// Mean of the reverse step from level `t`, written in terms of the score:
    /// `(x + β_t·score) / √α_t`, equivalent to the ε-form with `ε = −σ_t·score`.
    pub fn reverse_mean(&self, x: Vec2, score: Vec2, t: usize) -> Vec2 {
        linalg::scale(linalg::axpy(x, self.beta(t), score), 1.0 / self.alpha(t).sqrt())
    }
}
