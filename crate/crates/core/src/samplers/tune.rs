use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::samplers::config::{SamplerConfig, SamplerKind};
use crate::samplers::driver::annealed_mcmc;

/// Bisection settings for the step constant `c` in `c·β_t^p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneOptions {
    /// Target across-level mean acceptance; `None` uses 0.6 for MALA and 0.7
    /// for Hamiltonian kernels.
    pub target: Option<f64>,
    /// Stop once the pilot rate is this close to the target.
    pub tolerance: f64,
    /// Flag the result when the best rate is further than this.
    pub warn_tolerance: f64,
    pub max_iterations: usize,
    pub pilot_chains: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            target: None,
            tolerance: 0.02,
            warn_tolerance: 0.1,
            max_iterations: 20,
            pilot_chains: 256,
            lo: 1e-4,
            hi: 1e4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub step_scale: f64,
    pub rate: f64,
    pub target: f64,
    pub iterations: usize,
    pub warning: bool,
}

pub fn default_target(kind: SamplerKind) -> Option<f64> {
    match kind {
        SamplerKind::Mala => Some(0.6),
        SamplerKind::HmcPmr | SamplerKind::Hmc => Some(0.7),
        _ => None,
    }
}

/// Finds `c` such that the mean acceptance of `cfg` (with its step scale
/// replaced by `c`) is close to the target, by bisection on `log c` over pilot
/// runs. Acceptance falls as `c` grows.
pub fn tune_step_sizes(model: &dyn ScoreModel, cfg: &SamplerConfig, opts: &TuneOptions) -> Result<TuneResult> {
    let target = opts
        .target
        .or(default_target(cfg.kind))
        .ok_or_else(|| Error::Config(format!("{} has no acceptance step to tune", cfg.kind.label())))?;
    if !(opts.lo > 0.0 && opts.hi > opts.lo) {
        return Err(Error::Config(format!("bad tuning bracket [{}, {}]", opts.lo, opts.hi)));
    }
    let pilot = |c: f64| -> Result<f64> {
        let run = SamplerConfig { step_scale: c, ..cfg.clone() };
        let (_, st) = annealed_mcmc(model, &run, opts.pilot_chains)?;
        Ok(st.mean_acceptance().unwrap_or(1.0))
    };
    let (mut lo, mut hi) = (opts.lo.ln(), opts.hi.ln());
    let mut best = (f64::INFINITY, opts.lo, f64::NAN);
    let mut iterations = 0;
    for _ in 0..opts.max_iterations {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let c = mid.exp();
        let rate = pilot(c)?;
        let err = (rate - target).abs();
        if err <= best.0 {
            best = (err, c, rate);
        }
        info!("tuning {}: c = {c:.4e} -> acceptance {rate:.3}", cfg.kind.label());
        if err < opts.tolerance {
            break;
        }
        if rate > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let warning = !(best.0 <= opts.warn_tolerance);
    if warning {
        warn!("tuning {} stopped at acceptance {:.3}, target {target}", cfg.kind.label(), best.2);
    }
    Ok(TuneResult { step_scale: best.1, rate: best.2, target, iterations, warning })
}
