//! The interface every diffusion model and composition exposes to the samplers.

use std::fmt;

use crate::analytic::{AnalyticModel, ClassifierModel};
use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::schedule::NoiseSchedule;

/// A family of densities `p_t`, one per noise level, queried in batches.
///
/// `score` is `∇_x log p_t`. Where `has_energy` holds, `energy` is
/// `log p_t` up to a constant independent of `x` and `score` is its gradient.
pub trait ScoreModel: Send + Sync + fmt::Debug {
    fn schedule(&self) -> &NoiseSchedule;

    fn has_energy(&self) -> bool;

    /// Smallest level the model can be queried at (analytic models accept 0).
    fn min_level(&self) -> usize {
        1
    }

    fn score(&self, xs: &[Vec2], t: usize) -> Result<Vec<Vec2>>;

    fn energy_and_score(&self, xs: &[Vec2], t: usize) -> Result<(Vec<f64>, Vec<Vec2>)>;

    fn energy(&self, xs: &[Vec2], t: usize) -> Result<Vec<f64>> {
        Ok(self.energy_and_score(xs, t)?.0)
    }

    /// Closed-form leaf, if this is one.
    fn as_analytic(&self) -> Option<&AnalyticModel> {
        None
    }

    /// Closed-form noisy classifier, if this is one.
    fn as_classifier(&self) -> Option<&ClassifierModel> {
        None
    }

    fn describe(&self) -> String;

    fn check_level(&self, t: usize) -> Result<()> {
        let steps = self.schedule().steps();
        if t < self.min_level() || t > steps {
            Err(Error::TimeIndex { t, steps })
        } else {
            Ok(())
        }
    }
}

/// Error for energy queries on a score-only model.
pub fn no_energy(what: &str) -> Error {
    Error::Unsupported(format!("{what} exposes a score only, it has no energy"))
}
