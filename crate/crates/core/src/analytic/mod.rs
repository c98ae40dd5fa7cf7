//! Closed-form diffused distributions and brute-force grid references.

pub mod gmm;
pub mod grid;
pub mod model;
pub mod presets;
pub mod special;
pub mod uniform_box;

pub use gmm::{Gmm, GmmEvaluator, LabeledGmm};
pub use grid::{DiffusedGrid, GridOracle, GridSpec};
pub use model::{AnalyticBase, AnalyticModel, ClassifierModel};
pub use uniform_box::UniformBox;
