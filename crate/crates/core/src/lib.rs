//! Compositional sampling from 2D diffusion models.
//!
//! Models of a noisy density family `p_t` (closed-form or neural) are combined
//! into expression trees and sampled with annealed MCMC.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod cli;
pub mod compose;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod rng;
pub mod samplers;
pub mod schedule;

pub use compose::{CompositionTree, TreeSpec};
pub use error::{Error, Result};
pub use linalg::Vec2;
pub use model::ScoreModel;
pub use schedule::NoiseSchedule;
