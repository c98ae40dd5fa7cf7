//! Train a small energy-parameterized network on the ring, checkpoint it and
//! sample it with annealed HMC.
//!
//! cargo run --release --example train_energy [-- iterations]

use diffcomp::analytic::{presets, GridSpec};
use diffcomp::eval::{ground_truth_samples, mmd2};
use diffcomp::nn::checkpoint::{load_checkpoint, save_checkpoint};
use diffcomp::nn::{train, MlpArchitecture, NeuralModel, Parameterization, TrainConfig};
use diffcomp::samplers::{annealed_mcmc, reverse_diffusion, SamplerConfig};
use diffcomp::{CompositionTree, NoiseSchedule, Result, ScoreModel};
use std::sync::Arc;

fn main() -> Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let s = NoiseSchedule::linear_default(100)?;
    let ring = presets::ring_gmm();
    let mut m = NeuralModel::new("ring", MlpArchitecture::with_width(64, 2), Parameterization::EnergyL2, s, 0)?;
    let cfg = TrainConfig { iterations, ..TrainConfig::default() };
    let report = train(&mut m, |r| ring.sample(r), &cfg)?;
    println!("loss {:.4} -> {:.4}", report.smoothed(100, 100), report.smoothed(iterations, 100));

    let path = std::env::temp_dir().join("diffcomp_ring_l2.ckpt");
    save_checkpoint(&m, &path)?;
    let loaded = load_checkpoint(&path)?;
    println!("checkpoint {} ({} parameters)", path.display(), loaded.params().len());

    let tree = CompositionTree::leaf("ring", Arc::new(loaded));
    let n = 2000;
    let truth = ground_truth_samples(
        &CompositionTree::leaf(
            "exact",
            Arc::new(diffcomp::analytic::AnalyticModel::gmm("exact", ring, tree.schedule().clone())),
        ),
        n,
        0,
        GridSpec::default(),
    )?;
    let (rev, _) = reverse_diffusion(&tree, n, 0)?;
    let (hmc, _) = annealed_mcmc(&tree, &SamplerConfig::default(), n)?;
    println!("reverse MMD² {:.3e}   HMC MMD² {:.3e}", mmd2(rev.points(), &truth.points)?, mmd2(hmc.points(), &truth.points)?);
    Ok(())
}
