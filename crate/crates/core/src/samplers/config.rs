use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SamplerKind {
    /// Ancestral sampling only.
    Reverse,
    /// Unadjusted Langevin.
    Ula,
    /// Metropolis-adjusted Langevin.
    Mala,
    /// Unadjusted HMC with partially refreshed momentum.
    Uhmc,
    /// Metropolis-adjusted HMC with partial momentum refreshment.
    HmcPmr,
    /// Metropolis-adjusted HMC with a full momentum draw every step.
    Hmc,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 6] = [
        SamplerKind::Reverse,
        SamplerKind::Ula,
        SamplerKind::Mala,
        SamplerKind::Uhmc,
        SamplerKind::HmcPmr,
        SamplerKind::Hmc,
    ];

    pub fn needs_energy(self) -> bool {
        matches!(self, SamplerKind::Mala | SamplerKind::HmcPmr | SamplerKind::Hmc)
    }

    pub fn is_hamiltonian(self) -> bool {
        matches!(self, SamplerKind::Uhmc | SamplerKind::HmcPmr | SamplerKind::Hmc)
    }

    pub fn is_adjusted(self) -> bool {
        self.needs_energy()
    }

    /// Score evaluations per kernel step.
    pub fn evals_per_step(self, leapfrog_steps: usize) -> usize {
        match self {
            SamplerKind::Reverse => 0,
            SamplerKind::Ula | SamplerKind::Mala => 1,
            _ => leapfrog_steps,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SamplerKind::Reverse => "reverse",
            SamplerKind::Ula => "ula",
            SamplerKind::Mala => "mala",
            SamplerKind::Uhmc => "uhmc",
            SamplerKind::HmcPmr => "hmc_pmr",
            SamplerKind::Hmc => "hmc",
        }
    }
}

/// Annealed sampler settings.
///
/// The per-level step is `step_scale · β_t^step_exponent`. For Langevin kinds
/// it is the drift coefficient `η` of `x + η·score + √(2η)·ξ`; for
/// Hamiltonian kinds it is the leapfrog step. The scalar mass is
/// `mass_scale · β_t^mass_exponent`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub steps_per_t: usize,
    pub leapfrog_steps: usize,
    pub step_scale: f64,
    pub step_exponent: f64,
    pub mass_scale: f64,
    pub mass_exponent: f64,
    pub damping: f64,
    pub init_with_reverse_step: bool,
    pub clip_intermediate: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::HmcPmr,
            steps_per_t: 3,
            leapfrog_steps: 3,
            step_scale: 0.03,
            step_exponent: 0.0,
            mass_scale: 1.0,
            mass_exponent: 0.0,
            damping: 0.9,
            init_with_reverse_step: true,
            clip_intermediate: false,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn reverse() -> Self {
        Self { kind: SamplerKind::Reverse, steps_per_t: 0, ..Self::default() }
    }

    /// Fixed-step settings for the 2D experiments: 3 HMC steps of 3 leapfrog
    /// steps at 0.03 with unit mass, or 10 Langevin steps at 0.002.
    pub fn fixed_2d(kind: SamplerKind) -> Self {
        match kind {
            SamplerKind::Reverse => Self::reverse(),
            SamplerKind::Ula | SamplerKind::Mala => {
                Self { kind, steps_per_t: 10, leapfrog_steps: 1, step_scale: 0.002, ..Self::default() }
            }
            _ => Self { kind, ..Self::default() },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.kind != SamplerKind::Reverse && self.kind.is_hamiltonian() && self.leapfrog_steps < 1 {
            return bad("Hamiltonian samplers need at least one leapfrog step".into());
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return bad(format!("damping {} outside [0, 1]", self.damping));
        }
        if self.kind != SamplerKind::Reverse {
            if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
                return bad(format!("step scale must be positive, got {}", self.step_scale));
            }
            if !(self.mass_scale > 0.0 && self.mass_scale.is_finite()) {
                return bad(format!("mass scale must be positive, got {}", self.mass_scale));
            }
            if !self.step_exponent.is_finite() || !self.mass_exponent.is_finite() {
                return bad("step and mass exponents must be finite".into());
            }
        }
        Ok(())
    }

    /// Number of MCMC steps actually run per level.
    pub fn kernel_steps(&self) -> usize {
        if self.kind == SamplerKind::Reverse {
            0
        } else {
            self.steps_per_t
        }
    }

    pub fn step_size(&self, schedule: &NoiseSchedule, t: usize) -> f64 {
        self.step_scale * schedule.beta(t).powf(self.step_exponent)
    }

    pub fn mass(&self, schedule: &NoiseSchedule, t: usize) -> f64 {
        self.mass_scale * schedule.beta(t).powf(self.mass_exponent)
    }

    /// Score evaluations per chain for a `steps`-level run.
    pub fn evaluations_per_chain(&self, steps: usize) -> usize {
        steps * (1 + self.kernel_steps() * self.kind.evals_per_step(self.leapfrog_steps))
    }

    /// Steps of a plain reverse process with the same evaluation budget.
    pub fn equal_steps(&self, steps: usize) -> usize {
        self.evaluations_per_chain(steps)
    }

    /// Short stable identifier of the settings.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex16(&Sha256::digest(json))
    }
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
