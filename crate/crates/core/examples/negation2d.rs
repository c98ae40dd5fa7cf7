//! Negation: the ring with its right half suppressed, `∇log p − α∇log q`.
//!
//! cargo run --release --example negation2d

use std::sync::Arc;

use diffcomp::analytic::{presets, AnalyticModel, Gmm, GridSpec};
use diffcomp::eval::ground_truth_samples;
use diffcomp::samplers::{annealed_mcmc, reverse_diffusion, SamplerConfig, SamplerKind};
use diffcomp::{CompositionTree, NoiseSchedule, Result};

fn main() -> Result<()> {
    let n = 4000;
    let s = NoiseSchedule::linear_default(100)?;
    let ring = presets::ring_gmm();
    let right = Gmm::isotropic(vec![[0.5, 0.0]], 0.6)?;
    let pos = CompositionTree::leaf("ring", Arc::new(AnalyticModel::gmm("ring", ring, s.clone())));
    let neg = CompositionTree::leaf("right", Arc::new(AnalyticModel::gmm("right", right, s.clone())));

    for alpha in [0.1, 0.3, 0.5] {
        let tree = CompositionTree::negation(pos.clone(), neg.clone(), alpha)?;
        let (rev, _) = reverse_diffusion(&tree, n, 1)?;
        let (hmc, _) = annealed_mcmc(&tree, &SamplerConfig::fixed_2d(SamplerKind::HmcPmr).with_seed(1), n)?;
        let share = |p: &[[f64; 2]]| p.iter().filter(|x| x[0] > 0.25).count() as f64 / n as f64;
        let truth = ground_truth_samples(&tree, n, 1, GridSpec::default())?;
        println!(
            "alpha {alpha:.1}: share with x > 0.25   truth {:.3}   reverse {:.3}   HMC {:.3}",
            share(&truth.points),
            share(rev.points()),
            share(hmc.points())
        );
    }
    Ok(())
}
