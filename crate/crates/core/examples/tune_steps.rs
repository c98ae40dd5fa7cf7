//! Acceptance-rate tuning of the step constant on the ring × box product.
//!
//! cargo run --release --example tune_steps

use std::sync::Arc;

use diffcomp::analytic::{presets, AnalyticModel};
use diffcomp::samplers::{tune_step_sizes, SamplerConfig, SamplerKind, TuneOptions};
use diffcomp::{CompositionTree, NoiseSchedule, Result};

fn main() -> Result<()> {
    let s = NoiseSchedule::linear_default(100)?;
    let tree = CompositionTree::product(vec![
        CompositionTree::leaf("ring", Arc::new(AnalyticModel::gmm("ring", presets::ring_gmm(), s.clone()))),
        CompositionTree::leaf("box", Arc::new(AnalyticModel::uniform_box("box", presets::product_box(), s))),
    ])?;
    for kind in [SamplerKind::Mala, SamplerKind::HmcPmr] {
        let cfg = SamplerConfig::fixed_2d(kind);
        let r = tune_step_sizes(&tree, &cfg, &TuneOptions::default())?;
        println!(
            "{:8} step {:.4} -> {:.4}  acceptance {:.3} (target {}) after {} pilot runs{}",
            kind.label(),
            cfg.step_scale,
            r.step_scale,
            r.rate,
            r.target,
            r.iterations,
            if r.warning { "  [warning]" } else { "" }
        );
    }
    Ok(())
}
