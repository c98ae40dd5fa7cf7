//! Ancestral sampling, annealed MCMC and step-size tuning.

pub mod batch;
pub mod config;
pub mod driver;
pub mod kernels;
pub mod tune;

pub use batch::{Provenance, SampleBatch};
pub use config::{SamplerConfig, SamplerKind};
pub use driver::{annealed_mcmc, reverse_diffusion, ChainStats, LevelTarget};
pub use kernels::{hmc_pmr_step, hmc_step, leapfrog, mala_step, u_hmc_step, ula_step, Target};
pub use tune::{tune_step_sizes, TuneOptions, TuneResult};
