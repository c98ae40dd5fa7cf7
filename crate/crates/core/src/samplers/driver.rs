use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Vec2};
use crate::model::ScoreModel;
use crate::rng::{self, ChainRng};
use crate::samplers::batch::SampleBatch;
use crate::samplers::config::{SamplerConfig, SamplerKind};
use crate::samplers::kernels::{self, Chains, HmcParams, Target};
use crate::schedule::NoiseSchedule;

/// Chains advanced together in one batched evaluation. Fixed so that results
/// never depend on the worker count.
pub const CHUNK: usize = 512;

/// Per-run diagnostics. Per-level arrays are indexed by `t − 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub kind: SamplerKind,
    pub steps: usize,
    pub chains: usize,
    pub acceptance: Vec<f64>,
    pub step_size: Vec<f64>,
    pub mass: Vec<f64>,
    /// Mean chain energy after each level's kernel steps, when tracked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_energy: Option<Vec<f64>>,
    pub score_evaluations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuned_step_scale: Option<f64>,
    #[serde(default)]
    pub tuning_warning: bool,
}

impl ChainStats {
    /// Acceptance averaged over levels.
    pub fn mean_acceptance(&self) -> Option<f64> {
        if self.acceptance.is_empty() {
            None
        } else {
            Some(self.acceptance.iter().sum::<f64>() / self.acceptance.len() as f64)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A composed model at one fixed level.
pub struct LevelTarget<'a> {
    pub model: &'a dyn ScoreModel,
    pub t: usize,
}

impl Target for LevelTarget<'_> {
    fn evaluate(&self, xs: &[Vec2], with_energy: bool) -> Result<(Vec<f64>, Vec<Vec2>)> {
        if with_energy {
            self.model.energy_and_score(xs, self.t)
        } else {
            Ok((Vec::new(), self.model.score(xs, self.t)?))
        }
    }
}

/// One ancestral step from level `t` to `t − 1`; noiseless at `t = 1`.
fn reverse_step(s: &NoiseSchedule, x: Vec2, score: Vec2, t: usize, clip: bool, rng: &mut ChainRng) -> Vec2 {
    let mean = if clip {
        // eps = −σ_t·score; clamp the implied x̂₀ and use the posterior mean
        let ab = s.alpha_bar(t);
        let ab_prev = s.alpha_bar(t - 1);
        let x0 = linalg::scale(linalg::axpy(x, s.sigma2(t), score), 1.0 / ab.sqrt());
        let x0 = [x0[0].clamp(-1.0, 1.0), x0[1].clamp(-1.0, 1.0)];
        let c0 = ab_prev.sqrt() * s.beta(t) / s.sigma2(t);
        let ct = s.alpha(t).sqrt() * s.sigma2(t - 1) / s.sigma2(t);
        linalg::add(linalg::scale(x0, c0), linalg::scale(x, ct))
    } else {
        s.reverse_mean(x, score, t)
    };
    if t == 1 {
        mean
    } else {
        linalg::axpy(mean, s.reverse_variance(t).sqrt(), rng::normal2(rng))
    }
}

struct ChunkStats {
    accepted: Vec<usize>,
    energy_sum: Vec<f64>,
    evaluations: u64,
}

fn run_chunk(
    model: &dyn ScoreModel,
    cfg: &SamplerConfig,
    first_chain: usize,
    n: usize,
    abort: &AtomicBool,
) -> Result<(Vec<Vec2>, ChunkStats)> {
    let s = model.schedule();
    let steps = s.steps();
    let mut rngs: Vec<ChainRng> = (0..n).map(|i| rng::stream(cfg.seed, (first_chain + i) as u64)).collect();
    let mut x: Vec<Vec2> = rngs.iter_mut().map(rng::normal2).collect();
    let track_energy = cfg.kind.needs_energy() && cfg.kernel_steps() > 0;
    let n_kernel = cfg.kernel_steps();
    let mut stats = ChunkStats { accepted: vec![0; steps], energy_sum: vec![0.0; steps], evaluations: 0 };
    for t in (1..=steps).rev() {
        if abort.load(Ordering::Relaxed) {
            return Err(Error::Numeric("aborted".into()));
        }
        let target = LevelTarget { model, t };
        let mut c = Chains::new(&target, std::mem::take(&mut x), track_energy)?;
        stats.evaluations += n as u64;
        let step = if n_kernel > 0 { cfg.step_size(s, t) } else { 0.0 };
        let mass = if n_kernel > 0 { cfg.mass(s, t) } else { 1.0 };
        if n_kernel > 0 && cfg.kind.is_hamiltonian() {
            c.refresh_momentum(mass, &mut rngs);
        }
        let hmc = |damping, adjusted| HmcParams { step, leapfrog_steps: cfg.leapfrog_steps, mass, damping, adjusted };
        for _ in 0..n_kernel {
            let acc = match cfg.kind {
                SamplerKind::Reverse => 0,
                SamplerKind::Ula => {
                    kernels::ula_sweep(&target, &mut c, (2.0 * step).sqrt(), &mut rngs)?;
                    n
                }
                SamplerKind::Mala => kernels::mala_sweep(&target, &mut c, (2.0 * step).sqrt(), &mut rngs)?,
                SamplerKind::Uhmc => kernels::hmc_sweep(&target, &mut c, hmc(Some(cfg.damping), false), &mut rngs)?,
                SamplerKind::HmcPmr => kernels::hmc_sweep(&target, &mut c, hmc(Some(cfg.damping), true), &mut rngs)?,
                SamplerKind::Hmc => kernels::hmc_sweep(&target, &mut c, hmc(None, true), &mut rngs)?,
            };
            stats.accepted[t - 1] += acc;
            stats.evaluations += (n * cfg.kind.evals_per_step(cfg.leapfrog_steps)) as u64;
        }
        if track_energy {
            stats.energy_sum[t - 1] = c.energy.iter().sum();
        }
        x = c.x;
        if cfg.init_with_reverse_step {
            for ((xi, si), r) in x.iter_mut().zip(&c.score).zip(rngs.iter_mut()) {
                *xi = reverse_step(s, *xi, *si, t, cfg.clip_intermediate, r);
            }
        }
        if let Some(i) = x.iter().position(|p| !linalg::is_finite(*p)) {
            abort.store(true, Ordering::Relaxed);
            return Err(Error::Numeric(format!("non-finite state at t={t} in chain {}", first_chain + i)));
        }
    }
    Ok((x, stats))
}

/// Annealed MCMC: starting from `N(0, I)`, for `t = T..1` run the configured
/// kernel `N` times against the level-`t` model, then take one reverse step
/// (when enabled). With `N = 0` this is exactly ancestral sampling.
///
/// Chains run in parallel on the current rayon pool; chain `i` uses stream
/// `i` of `cfg.seed`, so the output is independent of the worker count.
pub fn annealed_mcmc(model: &dyn ScoreModel, cfg: &SamplerConfig, n: usize) -> Result<(SampleBatch, ChainStats)> {
    cfg.validate()?;
    if cfg.kind.needs_energy() && cfg.kernel_steps() > 0 && !model.has_energy() {
        return Err(Error::Capability(format!(
            "{} needs an energy but {} exposes a score only",
            cfg.kind.label(),
            model.describe()
        )));
    }
    let s = model.schedule();
    let steps = s.steps();
    let chunks: Vec<(usize, usize)> = (0..n).step_by(CHUNK).map(|a| (a, CHUNK.min(n - a))).collect();
    let abort = AtomicBool::new(false);
    let results: Vec<Result<(Vec<Vec2>, ChunkStats)>> =
        chunks.par_iter().map(|&(a, len)| run_chunk(model, cfg, a, len, &abort)).collect();
    let mut points = Vec::with_capacity(n);
    let mut accepted = vec![0usize; steps];
    let mut energy_sum = vec![0.0; steps];
    let mut evaluations = 0u64;
    let mut first_err = None;
    for r in results {
        match r {
            Ok((x, st)) => {
                points.extend(x);
                for t in 0..steps {
                    accepted[t] += st.accepted[t];
                    energy_sum[t] += st.energy_sum[t];
                }
                evaluations += st.evaluations;
            }
            Err(e) => {
                if first_err.is_none() || matches!(first_err, Some(Error::Numeric(ref m)) if m == "aborted") {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    let n_kernel = cfg.kernel_steps();
    let (acceptance, step_size, mass) = if n_kernel > 0 {
        (
            accepted.iter().map(|a| *a as f64 / (n.max(1) * n_kernel) as f64).collect(),
            (1..=steps).map(|t| cfg.step_size(s, t)).collect(),
            (1..=steps).map(|t| cfg.mass(s, t)).collect(),
        )
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    let mean_energy = (cfg.kind.needs_energy() && n_kernel > 0 && n > 0)
        .then(|| energy_sum.iter().map(|e| e / n as f64).collect());
    let stats = ChainStats {
        kind: cfg.kind,
        steps,
        chains: n,
        acceptance,
        step_size,
        mass,
        mean_energy,
        score_evaluations: evaluations,
        tuned_step_scale: None,
        tuning_warning: false,
    };
    Ok((SampleBatch::new(points, model.describe(), cfg.hash(), cfg.seed), stats))
}

/// Ancestral sampling with the model's own schedule.
pub fn reverse_diffusion(model: &dyn ScoreModel, n: usize, seed: u64) -> Result<(SampleBatch, ChainStats)> {
    annealed_mcmc(model, &SamplerConfig::reverse().with_seed(seed), n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{presets, AnalyticModel, Gmm};
    use crate::compose::CompositionTree;
    use crate::linalg::Sym2;
    use crate::nn::{MlpArchitecture, NeuralModel, Parameterization};
    use std::sync::Arc;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear_default(100).unwrap()
    }

    fn product() -> CompositionTree {
        let s = sched();
        CompositionTree::product(vec![
            CompositionTree::leaf("ring", Arc::new(AnalyticModel::gmm("ring", presets::ring_gmm(), s.clone()))),
            CompositionTree::leaf("box", Arc::new(AnalyticModel::uniform_box("box", presets::product_box(), s))),
        ])
        .unwrap()
    }

    #[test]
    fn zero_chains_and_zero_evaluations() {
        let (b, st) = reverse_diffusion(&product(), 0, 1).unwrap();
        assert!(b.is_empty());
        assert_eq!(st.score_evaluations, 0);
    }

    /// Exact moments of ancestral sampling with the exact score of a
    /// Gaussian base: every step is affine, so mean and covariance propagate
    /// in closed form.
    fn reverse_moments(s: &NoiseSchedule, mu: Vec2, cov: Sym2) -> (Vec2, Sym2) {
        let (mut m, mut c) = ([0.0, 0.0], Sym2::isotropic(1.0));
        for t in (1..=s.steps()).rev() {
            let ab = s.alpha_bar(t);
            let p = cov.scaled(ab).add_diag(1.0 - ab).inverse();
            let k = 1.0 / s.alpha(t).sqrt();
            // A = k (I − β P), b = k β √ᾱ P μ
            let a = Sym2::new(k * (1.0 - s.beta(t) * p.xx), -k * s.beta(t) * p.xy, k * (1.0 - s.beta(t) * p.yy));
            let b = linalg::scale(p.mul_vec(mu), k * s.beta(t) * ab.sqrt());
            m = linalg::add(a.mul_vec(m), b);
            let ac = [a.xx * c.xx + a.xy * c.xy, a.xx * c.xy + a.xy * c.yy, a.xy * c.xy + a.yy * c.yy];
            c = Sym2::new(
                ac[0] * a.xx + ac[1] * a.xy,
                ac[0] * a.xy + ac[1] * a.yy,
                (a.xy * c.xx + a.yy * c.xy) * a.xy + ac[2] * a.yy,
            )
            .add_diag(s.reverse_variance(t));
        }
        (m, c)
    }

    #[test]
    fn reverse_matches_the_exact_discrete_chain() {
        let (mu, cov) = ([0.3, -0.2], Sym2::new(0.05, 0.02, 0.08));
        let g = Gmm::new(vec![1.0], vec![mu], vec![cov]).unwrap();
        let n = 10_000;
        for steps in [100, 1000] {
            let s = NoiseSchedule::linear_default(steps).unwrap();
            let (m, c) = reverse_moments(&s, mu, cov);
            let (b, _) = reverse_diffusion(&AnalyticModel::gmm("g", g.clone(), s), n, 3).unwrap();
            let xs = b.points();
            let nf = n as f64;
            let mean = [xs.iter().map(|x| x[0]).sum::<f64>() / nf, xs.iter().map(|x| x[1]).sum::<f64>() / nf];
            let e = |a: usize, b: usize| xs.iter().map(|x| (x[a] - mean[a]) * (x[b] - mean[b])).sum::<f64>() / nf;
            assert!((mean[0] - m[0]).abs() < 3.0 * (c.xx / nf).sqrt());
            assert!((mean[1] - m[1]).abs() < 3.0 * (c.yy / nf).sqrt());
            assert!((e(0, 0) - c.xx).abs() < 3.0 * c.xx * (2.0 / nf).sqrt(), "{} vs {}", e(0, 0), c.xx);
            assert!((e(1, 1) - c.yy).abs() < 3.0 * c.yy * (2.0 / nf).sqrt());
            assert!((e(0, 1) - c.xy).abs() < 3.0 * ((c.xx * c.yy + c.xy * c.xy) / nf).sqrt());
            // the chain approaches the base itself as the step count grows
            let tol = if steps == 100 { 0.25 } else { 0.05 };
            assert!((c.xx / cov.xx - 1.0).abs() < tol && (m[0] - mu[0]).abs() < 0.01);
        }
    }

    #[test]
    fn zero_kernel_steps_reduce_to_reverse() {
        let tree = product();
        let (r, rs) = reverse_diffusion(&tree, 700, 9).unwrap();
        for kind in [SamplerKind::Mala, SamplerKind::HmcPmr, SamplerKind::Ula] {
            let cfg = SamplerConfig { steps_per_t: 0, ..SamplerConfig::fixed_2d(kind).with_seed(9) };
            let (b, st) = annealed_mcmc(&tree, &cfg, 700).unwrap();
            assert_eq!(b.points(), r.points());
            assert_eq!(st.score_evaluations, rs.score_evaluations);
        }
    }

    #[test]
    fn evaluation_accounting() {
        let tree = product();
        for kind in [SamplerKind::Ula, SamplerKind::Mala, SamplerKind::Uhmc, SamplerKind::HmcPmr, SamplerKind::Hmc] {
            let cfg = SamplerConfig { leapfrog_steps: 2, ..SamplerConfig::fixed_2d(kind) };
            let (_, st) = annealed_mcmc(&tree, &cfg, 600).unwrap();
            assert_eq!(st.score_evaluations, (cfg.evaluations_per_chain(100) * 600) as u64, "{kind:?}");
            assert!(st.acceptance.iter().all(|a| (0.0..=1.0).contains(a)));
            assert_eq!(st.acceptance.len(), 100);
        }
    }

    #[test]
    fn chains_are_independent_of_batch_layout() {
        let tree = product();
        let cfg = SamplerConfig::fixed_2d(SamplerKind::HmcPmr).with_seed(4);
        let (all, _) = annealed_mcmc(&tree, &cfg, CHUNK + 10).unwrap();
        let (few, _) = annealed_mcmc(&tree, &cfg, 5).unwrap();
        assert_eq!(&all.points()[..5], few.points());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let (par, _) = pool.install(|| annealed_mcmc(&tree, &cfg, CHUNK + 10)).unwrap();
        assert_eq!(par.points(), all.points());
    }

    #[test]
    fn capability_checked_before_running() {
        let net = NeuralModel::new("eps", MlpArchitecture::with_width(8, 1), Parameterization::Epsilon, sched(), 0).unwrap();
        let err = annealed_mcmc(&net, &SamplerConfig::fixed_2d(SamplerKind::Mala), 10).unwrap_err();
        assert!(matches!(err, Error::Capability(_)));
        assert!(annealed_mcmc(&net, &SamplerConfig::fixed_2d(SamplerKind::Uhmc), 4).is_ok());
        assert!(annealed_mcmc(&net, &SamplerConfig::fixed_2d(SamplerKind::Ula), 4).is_ok());
    }

    #[test]
    fn non_finite_state_aborts() {
        #[derive(Debug)]
        struct Bad(NoiseSchedule);
        impl ScoreModel for Bad {
            fn schedule(&self) -> &NoiseSchedule {
                &self.0
            }
            fn has_energy(&self) -> bool {
                false
            }
            fn score(&self, xs: &[Vec2], t: usize) -> Result<Vec<Vec2>> {
                Ok(xs.iter().map(|x| if t == 40 { [f64::NAN, 0.0] } else { [-x[0], -x[1]] }).collect())
            }
            fn energy_and_score(&self, _: &[Vec2], _: usize) -> Result<(Vec<f64>, Vec<Vec2>)> {
                unreachable!()
            }
            fn describe(&self) -> String {
                "bad".into()
            }
        }
        let err = reverse_diffusion(&Bad(sched()), 3, 0).unwrap_err();
        assert!(matches!(&err, Error::Numeric(m) if m.contains("t=40") && m.contains("chain 0")), "{err}");
    }
}
