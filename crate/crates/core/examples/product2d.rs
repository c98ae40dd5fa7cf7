//! Product of a ring of Gaussians and a thin box: reverse diffusion on the
//! summed scores versus annealed HMC, both scored against exact samples.
//!
//! cargo run --release --example product2d [-- samples]

use std::sync::Arc;

use diffcomp::analytic::{presets, AnalyticModel, GridSpec};
use diffcomp::cli::plot::{render_svg, Panel};
use diffcomp::eval::{ground_truth_samples, mmd2};
use diffcomp::samplers::{annealed_mcmc, reverse_diffusion, SamplerConfig, SamplerKind};
use diffcomp::{CompositionTree, NoiseSchedule, Result};

fn main() -> Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let s = NoiseSchedule::linear_default(100)?;
    let ring = CompositionTree::leaf("ring", Arc::new(AnalyticModel::gmm("ring", presets::ring_gmm(), s.clone())));
    let bx = CompositionTree::leaf("box", Arc::new(AnalyticModel::uniform_box("box", presets::product_box(), s.clone())));
    let tree = CompositionTree::product(vec![ring, bx])?;

    let truth = ground_truth_samples(&tree, n, 0, GridSpec::default())?;
    let (reverse, _) = reverse_diffusion(&tree, n, 0)?;
    let (hmc, stats) = annealed_mcmc(&tree, &SamplerConfig::fixed_2d(SamplerKind::HmcPmr), n)?;

    println!("target: {}", tree.describe());
    println!("reverse  MMD² {:.3e}", mmd2(reverse.points(), &truth.points)?);
    println!(
        "HMC      MMD² {:.3e}  (acceptance {:.3}, {} score evaluations)",
        mmd2(hmc.points(), &truth.points)?,
        stats.mean_acceptance().unwrap_or(f64::NAN),
        stats.score_evaluations
    );

    let panels = [
        Panel { label: "ground truth", points: &truth.points },
        Panel { label: "reverse", points: reverse.points() },
        Panel { label: "HMC", points: hmc.points() },
    ];
    std::fs::write("product2d.svg", render_svg(&panels, [-1.2, 1.2, -1.2, 1.2], 300.0)?)?;
    println!("wrote product2d.svg");
    Ok(())
}
