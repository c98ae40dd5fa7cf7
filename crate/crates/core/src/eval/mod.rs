//! Sample-quality metrics and the diffusion-composition verification suite.

pub mod em;
pub mod metrics;
pub mod mmd;
pub mod oracle;
pub mod verify;

pub use em::{fit_gmm, var_metric, EmConfig, EmFit};
pub use metrics::{evaluate, ll_oracle, ll_under_target, LogLikelihood, MetricConfig, MetricsMeta, MetricsReport, Moments, Reference};
pub use mmd::{median_bandwidth, mmd2};
pub use oracle::{composed_grid, ground_truth_samples, tree_as_gmm, GroundTruth, TruthMethod};
pub use verify::{verification_suite, ClaimRecord, SuiteConfig, Verdict, VerificationReport};
