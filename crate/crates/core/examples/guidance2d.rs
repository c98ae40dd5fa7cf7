//! Classifier guidance and its classifier-free form on a labeled mixture,
//! plus a two-condition product.
//!
//! cargo run --release --example guidance2d

use std::sync::Arc;

use diffcomp::analytic::{presets, AnalyticModel, ClassifierModel, GridSpec};
use diffcomp::eval::{ground_truth_samples, mmd2};
use diffcomp::samplers::{annealed_mcmc, reverse_diffusion, SamplerConfig, SamplerKind};
use diffcomp::{CompositionTree, NoiseSchedule, Result};

fn main() -> Result<()> {
    let n = 3000;
    let s = NoiseSchedule::linear_default(100)?;
    let g = presets::labeled_gmm();
    let joint = CompositionTree::leaf("p", Arc::new(AnalyticModel::labeled("p", g.clone(), None, s.clone())?));
    let cond = CompositionTree::leaf("p|y=1", Arc::new(AnalyticModel::labeled("p|y=1", g.clone(), Some(1), s.clone())?));
    let cls = CompositionTree::leaf("p(y=1|x)", Arc::new(ClassifierModel::new(g.clone(), 1, s.clone())?));

    let hmc = SamplerConfig::fixed_2d(SamplerKind::HmcPmr);
    for lambda in [1.0, 3.0] {
        let explicit = CompositionTree::guidance_explicit(joint.clone(), cls.clone(), lambda)?;
        let implicit = CompositionTree::guidance_implicit(joint.clone(), cond.clone(), joint.clone(), lambda)?;
        let truth = ground_truth_samples(&explicit, n, 0, GridSpec::default())?;
        for (label, tree) in [("explicit", &explicit), ("implicit", &implicit)] {
            let (rev, _) = reverse_diffusion(tree, n, 0)?;
            let (mc, _) = annealed_mcmc(tree, &hmc, n)?;
            println!(
                "lambda {lambda}  {label:8}  reverse MMD² {:.3e}   HMC MMD² {:.3e}",
                mmd2(rev.points(), &truth.points)?,
                mmd2(mc.points(), &truth.points)?
            );
        }
    }

    let cond0 = CompositionTree::leaf("p|y=0", Arc::new(AnalyticModel::labeled("p|y=0", g, Some(0), s)?));
    let both = CompositionTree::conditional_product(joint, vec![cond0, cond])?;
    let (pts, _) = annealed_mcmc(&both, &hmc, n)?;
    let mean_x = pts.points().iter().map(|p| p[0]).sum::<f64>() / n as f64;
    println!("{}: mean x {mean_x:.3}", both.describe());
    Ok(())
}
