//! Mixture of two three-mode columns, weighted through per-level energies.
//!
//! cargo run --release --example mixture2d

use std::sync::Arc;

use diffcomp::analytic::{presets, AnalyticModel, GridSpec};
use diffcomp::eval::{ground_truth_samples, mmd2, tree_as_gmm};
use diffcomp::linalg;
use diffcomp::samplers::{annealed_mcmc, reverse_diffusion, SamplerConfig, SamplerKind};
use diffcomp::{CompositionTree, NoiseSchedule, Result};

fn main() -> Result<()> {
    let n = 4000;
    let s = NoiseSchedule::linear_default(100)?;
    let (left, right) = presets::mixture_pair();
    let leaf = |name: &str, g| CompositionTree::leaf(name, Arc::new(AnalyticModel::gmm(name, g, s.clone())));
    let tree = CompositionTree::mixture(vec![leaf("left", left), leaf("right", right)], vec![0.5, 0.5])?;

    let truth = ground_truth_samples(&tree, n, 0, GridSpec::default())?;
    let centers = tree_as_gmm(&tree).expect("mixture of mixtures").means().to_vec();
    for (label, pts) in [
        ("reverse", reverse_diffusion(&tree, n, 0)?.0.into_points()),
        ("HMC", annealed_mcmc(&tree, &SamplerConfig::fixed_2d(SamplerKind::HmcPmr), n)?.0.into_points()),
    ] {
        let mut counts = vec![0usize; centers.len()];
        for p in &pts {
            let k = (0..centers.len())
                .min_by(|&a, &b| {
                    linalg::norm(linalg::sub(*p, centers[a])).total_cmp(&linalg::norm(linalg::sub(*p, centers[b])))
                })
                .unwrap();
            counts[k] += 1;
        }
        let shares: Vec<String> = counts.iter().map(|c| format!("{:.3}", *c as f64 / n as f64)).collect();
        println!("{label:8} MMD² {:.3e}  mode shares [{}]", mmd2(&pts, &truth.points)?, shares.join(", "));
    }
    Ok(())
}
