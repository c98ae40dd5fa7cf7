//! MCMC transition kernels.
//!
//! Every kernel works on a batch of independent chains that share one target;
//! chain `i` draws only from `rngs[i]`. Single-chain wrappers taking plain
//! closures are provided for direct use.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Vec2};
use crate::rng;

/// Energies below this are treated as zero density.
pub const ENERGY_FLOOR: f64 = -1e12;

/// A batched unnormalized log-density and its gradient.
pub trait Target {
    /// Scores at `xs`, plus energies when `with_energy` holds (otherwise an
    /// empty vector).
    fn evaluate(&self, xs: &[Vec2], with_energy: bool) -> Result<(Vec<f64>, Vec<Vec2>)>;
}

/// Target given by a per-point `(energy, score)` closure.
pub struct FnTarget<F>(pub F);

impl<F: Fn(Vec2) -> (f64, Vec2)> Target for FnTarget<F> {
    fn evaluate(&self, xs: &[Vec2], _with_energy: bool) -> Result<(Vec<f64>, Vec<Vec2>)> {
        Ok(xs.iter().map(|x| (self.0)(*x)).unzip())
    }
}

/// Score-only target given by a per-point closure.
pub struct ScoreFn<F>(pub F);

impl<F: Fn(Vec2) -> Vec2> Target for ScoreFn<F> {
    fn evaluate(&self, xs: &[Vec2], with_energy: bool) -> Result<(Vec<f64>, Vec<Vec2>)> {
        if with_energy {
            return Err(Error::Capability("target exposes a score only".into()));
        }
        Ok((Vec::new(), xs.iter().map(|x| (self.0)(*x)).collect()))
    }
}

/// Chain positions with their cached energies (when tracked), scores and
/// momenta.
#[derive(Clone, Debug, Default)]
pub struct Chains {
    pub x: Vec<Vec2>,
    pub energy: Vec<f64>,
    pub score: Vec<Vec2>,
    pub v: Vec<Vec2>,
}

impl Chains {
    /// Evaluates the target at `x` to fill the caches.
    pub fn new(target: &dyn Target, x: Vec<Vec2>, with_energy: bool) -> Result<Self> {
        let (energy, score) = target.evaluate(&x, with_energy)?;
        let v = vec![[0.0; 2]; x.len()];
        Ok(Self { x, energy, score, v })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Draws every momentum afresh from `N(0, mass·I)`.
    pub fn refresh_momentum<R: Rng>(&mut self, mass: f64, rngs: &mut [R]) {
        let s = mass.sqrt();
        for (v, r) in self.v.iter_mut().zip(rngs) {
            *v = linalg::scale(rng::normal2(r), s);
        }
    }
}

fn guard(e: f64) -> Result<f64> {
    if e.is_nan() {
        Err(Error::Numeric("energy evaluated to NaN".into()))
    } else {
        Ok(e.max(ENERGY_FLOOR))
    }
}

/// Deterministic part of a Langevin move with noise scale `sigma`.
#[inline]
pub fn langevin_drift(x: Vec2, score: Vec2, sigma: f64) -> Vec2 {
    linalg::axpy(x, 0.5 * sigma * sigma, score)
}

/// `log k(to | from)` for the Langevin proposal, up to a constant.
#[inline]
pub fn langevin_log_kernel(to: Vec2, from: Vec2, from_score: Vec2, sigma: f64) -> f64 {
    -linalg::norm_sq(linalg::sub(to, langevin_drift(from, from_score, sigma))) / (2.0 * sigma * sigma)
}

/// One unadjusted Langevin step per chain: `x + (σ²/2)·score + σ·ξ`.
pub fn ula_sweep<R: Rng>(target: &dyn Target, c: &mut Chains, sigma: f64, rngs: &mut [R]) -> Result<()> {
    for ((x, s), r) in c.x.iter_mut().zip(&c.score).zip(rngs.iter_mut()) {
        *x = linalg::axpy(langevin_drift(*x, *s, sigma), sigma, rng::normal2(r));
    }
    let want_energy = !c.energy.is_empty();
    let (e, s) = target.evaluate(&c.x, want_energy)?;
    c.score = s;
    if want_energy {
        c.energy = e;
    }
    Ok(())
}

/// One MALA step per chain. Returns the number of accepted proposals.
pub fn mala_sweep<R: Rng>(target: &dyn Target, c: &mut Chains, sigma: f64, rngs: &mut [R]) -> Result<usize> {
    let proposals: Vec<Vec2> = c
        .x
        .iter()
        .zip(&c.score)
        .zip(rngs.iter_mut())
        .map(|((x, s), r)| linalg::axpy(langevin_drift(*x, *s, sigma), sigma, rng::normal2(r)))
        .collect();
    let (pe, ps) = target.evaluate(&proposals, true)?;
    let mut accepted = 0;
    for i in 0..c.len() {
        let f_new = guard(pe[i])?;
        let f_old = guard(c.energy[i])?;
        let log_ratio = f_new - f_old + langevin_log_kernel(c.x[i], proposals[i], ps[i], sigma)
            - langevin_log_kernel(proposals[i], c.x[i], c.score[i], sigma);
        let u = rng::uniform_open(&mut rngs[i]);
        if f_new > ENERGY_FLOOR && u.ln() < log_ratio {
            c.x[i] = proposals[i];
            c.energy[i] = pe[i];
            c.score[i] = ps[i];
            accepted += 1;
        }
    }
    Ok(accepted)
}

/// `L` leapfrog steps on every chain, starting from the cached scores.
/// Energies are requested at the final position when `with_energy` holds.
#[allow(clippy::too_many_arguments)]
pub fn leapfrog_batch(
    target: &dyn Target,
    x: &mut [Vec2],
    v: &mut [Vec2],
    score: &mut Vec<Vec2>,
    step: f64,
    l: usize,
    mass: f64,
    with_energy: bool,
) -> Result<Vec<f64>> {
    let mut energy = Vec::new();
    for k in 0..l {
        for i in 0..x.len() {
            v[i] = linalg::axpy(v[i], 0.5 * step, score[i]);
            x[i] = linalg::axpy(x[i], step / mass, v[i]);
        }
        let (e, s) = target.evaluate(x, with_energy && k + 1 == l)?;
        *score = s;
        energy = e;
        for i in 0..x.len() {
            v[i] = linalg::axpy(v[i], 0.5 * step, score[i]);
        }
    }
    Ok(energy)
}

/// Hamiltonian step options.
#[derive(Clone, Copy, Debug)]
pub struct HmcParams {
    pub step: f64,
    pub leapfrog_steps: usize,
    pub mass: f64,
    /// Momentum damping; `None` draws the momentum afresh.
    pub damping: Option<f64>,
    pub adjusted: bool,
}

fn kinetic(v: Vec2, mass: f64) -> f64 {
    0.5 * linalg::norm_sq(v) / mass
}

/// One Hamiltonian step per chain. With damping the momentum is partially
/// refreshed, negated after the trajectory, accepted or rejected jointly with
/// the position, and negated again. Returns the number of accepted moves.
pub fn hmc_sweep<R: Rng>(target: &dyn Target, c: &mut Chains, p: HmcParams, rngs: &mut [R]) -> Result<usize> {
    let sm = p.mass.sqrt();
    for (v, r) in c.v.iter_mut().zip(rngs.iter_mut()) {
        let fresh = linalg::scale(rng::normal2(r), sm);
        *v = match p.damping {
            None => fresh,
            Some(g) => linalg::axpy(linalg::scale(*v, g), (1.0 - g * g).sqrt(), fresh),
        };
    }
    let mut x = c.x.clone();
    let mut v = c.v.clone();
    let mut score = c.score.clone();
    let want_energy = p.adjusted || !c.energy.is_empty();
    let energy = leapfrog_batch(target, &mut x, &mut v, &mut score, p.step, p.leapfrog_steps, p.mass, want_energy)?;
    let mut accepted = 0;
    for i in 0..c.len() {
        let v_new = linalg::scale(v[i], -1.0);
        let accept = if p.adjusted {
            let f_new = guard(energy[i])?;
            let h_old = -guard(c.energy[i])? + kinetic(c.v[i], p.mass);
            let h_new = -f_new + kinetic(v_new, p.mass);
            let u = rng::uniform_open(&mut rngs[i]);
            f_new > ENERGY_FLOOR && u.ln() < h_old - h_new
        } else {
            true
        };
        let v_kept = if accept {
            c.x[i] = x[i];
            c.score[i] = score[i];
            if want_energy {
                c.energy[i] = energy[i];
            }
            accepted += 1;
            v_new
        } else {
            c.v[i]
        };
        c.v[i] = linalg::scale(v_kept, -1.0);
    }
    Ok(accepted)
}

fn single<T>(x: Vec2, with_energy: bool, target: &T) -> Chains
where
    T: Target,
{
    Chains::new(target, vec![x], with_energy).expect("closure targets do not fail")
}

/// One unadjusted Langevin step with `σ_L = step`.
pub fn ula_step<R: Rng>(score: impl Fn(Vec2) -> Vec2, x: Vec2, step: f64, rng: &mut R) -> Vec2 {
    let t = ScoreFn(score);
    let mut c = single(x, false, &t);
    ula_sweep(&t, &mut c, step, std::slice::from_mut(rng)).expect("closure targets do not fail");
    c.x[0]
}

/// One MALA step with `σ_L = step`; `target` returns `(energy, score)`.
pub fn mala_step<R: Rng>(target: impl Fn(Vec2) -> (f64, Vec2), x: Vec2, step: f64, rng: &mut R) -> (Vec2, bool) {
    let t = FnTarget(target);
    let mut c = single(x, true, &t);
    let a = mala_sweep(&t, &mut c, step, std::slice::from_mut(rng)).expect("closure targets do not fail");
    (c.x[0], a == 1)
}

/// `l` leapfrog steps of Hamiltonian dynamics with potential `−energy`.
pub fn leapfrog(score: impl Fn(Vec2) -> Vec2, x: Vec2, v: Vec2, step: f64, l: usize, mass: f64) -> (Vec2, Vec2) {
    let t = ScoreFn(score);
    let mut s = vec![(t.0)(x)];
    let mut xs = [x];
    let mut vs = [v];
    leapfrog_batch(&t, &mut xs, &mut vs, &mut s, step, l, mass, false).expect("closure targets do not fail");
    (xs[0], vs[0])
}

/// Metropolis-adjusted HMC with a full momentum draw.
pub fn hmc_step<R: Rng>(
    target: impl Fn(Vec2) -> (f64, Vec2),
    x: Vec2,
    step: f64,
    l: usize,
    mass: f64,
    rng: &mut R,
) -> (Vec2, bool) {
    let t = FnTarget(target);
    let mut c = single(x, true, &t);
    let p = HmcParams { step, leapfrog_steps: l, mass, damping: None, adjusted: true };
    let a = hmc_sweep(&t, &mut c, p, std::slice::from_mut(rng)).expect("closure targets do not fail");
    (c.x[0], a == 1)
}

/// Metropolis-adjusted HMC carrying momentum `v` with damping `gamma`.
#[allow(clippy::too_many_arguments)]
pub fn hmc_pmr_step<R: Rng>(
    target: impl Fn(Vec2) -> (f64, Vec2),
    x: Vec2,
    v: Vec2,
    gamma: f64,
    step: f64,
    l: usize,
    mass: f64,
    rng: &mut R,
) -> (Vec2, Vec2, bool) {
    let t = FnTarget(target);
    let mut c = single(x, true, &t);
    c.v[0] = v;
    let p = HmcParams { step, leapfrog_steps: l, mass, damping: Some(gamma), adjusted: true };
    let a = hmc_sweep(&t, &mut c, p, std::slice::from_mut(rng)).expect("closure targets do not fail");
    (c.x[0], c.v[0], a == 1)
}

/// HMC with a full momentum draw and no accept/reject step.
pub fn u_hmc_step<R: Rng>(score: impl Fn(Vec2) -> Vec2, x: Vec2, step: f64, l: usize, mass: f64, rng: &mut R) -> Vec2 {
    let t = ScoreFn(score);
    let mut c = single(x, false, &t);
    let p = HmcParams { step, leapfrog_steps: l, mass, damping: None, adjusted: false };
    hmc_sweep(&t, &mut c, p, std::slice::from_mut(rng)).expect("closure targets do not fail");
    c.x[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Sym2;
    use crate::rng::{stream, ChainRng};

    fn std_normal(x: Vec2) -> (f64, Vec2) {
        (-0.5 * linalg::norm_sq(x), [-x[0], -x[1]])
    }

    fn gaussian(mean: Vec2, cov: Sym2) -> impl Fn(Vec2) -> (f64, Vec2) + Copy {
        let p = cov.inverse();
        move |x| {
            let d = linalg::sub(x, mean);
            let g = p.mul_vec(d);
            (-0.5 * linalg::dot(d, g), [-g[0], -g[1]])
        }
    }

    fn moments(xs: &[Vec2]) -> (Vec2, Sym2) {
        let n = xs.len() as f64;
        let m = [xs.iter().map(|x| x[0]).sum::<f64>() / n, xs.iter().map(|x| x[1]).sum::<f64>() / n];
        let c = |a: usize, b: usize| xs.iter().map(|x| (x[a] - m[a]) * (x[b] - m[b])).sum::<f64>() / (n - 1.0);
        (m, Sym2::new(c(0, 0), c(0, 1), c(1, 1)))
    }

    #[test]
    fn ula_deterministic_part() {
        let x = [0.7, -0.4];
        let mut r: ChainRng = stream(0, 0);
        let n = rng::normal2(&mut r);
        let step = 0.2;
        let mut r: ChainRng = stream(0, 0);
        let y = ula_step(|x| [-x[0], -x[1]], x, step, &mut r);
        for d in 0..2 {
            assert!((y[d] - (x[d] * (1.0 - 0.02) + step * n[d])).abs() < 1e-15);
        }
        let mut r: ChainRng = stream(0, 1);
        let n = rng::normal2(&mut r);
        let mut r: ChainRng = stream(0, 1);
        let y = ula_step(|_| [0.0, 0.0], x, step, &mut r);
        assert_eq!(y, linalg::axpy(x, step, n));
    }

    #[test]
    fn ula_matches_discrete_stationary_variance() {
        // x' = (1 − h²/2)x + hξ has stationary variance h² / (1 − (1 − h²/2)²)
        let h: f64 = 0.1;
        let a = 1.0 - h * h / 2.0;
        let v_true = h * h / (1.0 - a * a);
        // independent chains, each run well past its mixing time
        let xs: Vec<Vec2> = (0..4000)
            .map(|i| {
                let mut r = stream(1, i);
                let mut x = [0.0, 0.0];
                for _ in 0..1500 {
                    x = ula_step(|x| [-x[0], -x[1]], x, h, &mut r);
                }
                x
            })
            .collect();
        let (_, c) = moments(&xs);
        assert!((c.xx / v_true - 1.0).abs() < 0.1 && (c.yy / v_true - 1.0).abs() < 0.1, "{c:?} vs {v_true}");
    }

    #[test]
    fn mala_symmetric_move_is_accepted() {
        // flat target: every proposal has the same energy and zero drift
        let mut r = stream(2, 0);
        for _ in 0..100 {
            let (_, acc) = mala_step(|_| (0.0, [0.0, 0.0]), [0.1, 0.2], 0.5, &mut r);
            assert!(acc);
        }
    }

    #[test]
    fn mala_rejects_zero_density() {
        let mut r = stream(3, 0);
        let target = |x: Vec2| if x[0].abs() < 1e-3 { (0.0, [0.0, 0.0]) } else { (f64::NEG_INFINITY, [0.0, 0.0]) };
        for _ in 0..100 {
            let (x, acc) = mala_step(target, [0.0, 0.0], 0.3, &mut r);
            assert!(!acc && x == [0.0, 0.0]);
        }
    }

    #[test]
    fn mala_standard_normal_moments() {
        let mut r = stream(4, 0);
        let mut x = [1.0, -1.0];
        let mut xs = Vec::new();
        let mut acc = 0;
        for k in 0..21_000 * 5 {
            let (y, a) = mala_step(std_normal, x, 1.4, &mut r);
            x = y;
            acc += a as usize;
            if k >= 5_000 && k % 5 == 0 {
                xs.push(x);
            }
        }
        let rate = acc as f64 / (21_000.0 * 5.0);
        assert!((0.45..0.75).contains(&rate), "rate {rate}");
        let (m, c) = moments(&xs[..20_000]);
        assert!(m[0].abs() < 0.05 && m[1].abs() < 0.05, "{m:?}");
        assert!((c.xx - 1.0).abs() < 0.1 && (c.yy - 1.0).abs() < 0.1 && c.xy.abs() < 0.1, "{c:?}");
    }

    #[test]
    fn leapfrog_reversibility_and_drift() {
        let target = gaussian([0.2, -0.1], Sym2::new(0.5, 0.2, 0.3));
        let score = |x| target(x).1;
        let (x, v) = ([0.4, 0.3], [-0.7, 1.1]);
        let (x1, v1) = leapfrog(score, x, v, 0.05, 40, 1.3);
        let (x2, v2) = leapfrog(score, x1, linalg::scale(v1, -1.0), 0.05, 40, 1.3);
        for d in 0..2 {
            assert!((x2[d] - x[d]).abs() < 1e-10 && (v2[d] + v[d]).abs() < 1e-10);
        }
        let h = |x: Vec2, v: Vec2| 0.5 * linalg::norm_sq(x) + 0.5 * linalg::norm_sq(v);
        let (x1, v1) = leapfrog(|x| [-x[0], -x[1]], x, v, 0.01, 100, 1.0);
        assert!((h(x1, v1) - h(x, v)).abs() < 1e-4);
        let (x1, v1) = leapfrog(|_| [0.0, 0.0], x, v, 0.1, 7, 2.0);
        assert!((x1[0] - (x[0] + 7.0 * 0.1 * v[0] / 2.0)).abs() < 1e-14 && v1 == v);
    }

    #[test]
    fn full_refresh_equals_zero_damping() {
        let target = gaussian([0.0, 0.0], Sym2::new(1.0, 0.5, 1.0));
        for seed in 0..20 {
            let mut a = stream(seed, 0);
            let mut b = stream(seed, 0);
            let (xa, acc_a) = hmc_step(target, [0.3, 0.1], 0.4, 5, 1.0, &mut a);
            let (xb, _, acc_b) = hmc_pmr_step(target, [0.3, 0.1], [5.0, -2.0], 0.0, 0.4, 5, 1.0, &mut b);
            assert_eq!(xa, xb);
            assert_eq!(acc_a, acc_b);
        }
    }

    #[test]
    fn tiny_steps_are_always_accepted() {
        let target = gaussian([0.1, 0.0], Sym2::new(0.2, 0.05, 0.1));
        let mut r = stream(5, 0);
        let mut acc = 0;
        for _ in 0..1000 {
            acc += hmc_step(target, [0.3, -0.2], 1e-4, 3, 1.0, &mut r).1 as usize;
        }
        assert_eq!(acc, 1000);
    }

    fn hmc_chain(pmr: bool, seed: u64) -> Vec<Vec2> {
        let target = gaussian([0.3, -0.2], Sym2::new(1.0, 0.6, 0.8));
        let mut r = stream(seed, 0);
        let (mut x, mut v) = ([0.0, 0.0], [0.0, 0.0]);
        let mut xs = Vec::new();
        for k in 0..21_000 {
            if pmr {
                let (y, w, _) = hmc_pmr_step(target, x, v, 0.5, 0.3, 3, 1.0, &mut r);
                x = y;
                v = w;
            } else {
                x = hmc_step(target, x, 0.3, 3, 1.0, &mut r).0;
            }
            if k >= 1_000 {
                xs.push(x);
            }
        }
        xs
    }

    #[test]
    fn hmc_correlated_gaussian_moments() {
        for pmr in [false, true] {
            let (m, c) = moments(&hmc_chain(pmr, 6));
            assert!((m[0] - 0.3).abs() < 0.05 && (m[1] + 0.2).abs() < 0.05, "{m:?}");
            assert!((c.xx - 1.0).abs() < 0.1 && (c.xy - 0.6).abs() < 0.1 && (c.yy - 0.8).abs() < 0.1, "{c:?}");
        }
    }

    #[test]
    fn u_hmc_moments_and_trivial_move() {
        let mut r = stream(7, 0);
        let mut x = [0.0, 0.0];
        let mut xs = Vec::new();
        for k in 0..20_000 {
            x = u_hmc_step(|x| [-x[0], -x[1]], x, 0.1, 5, 1.0, &mut r);
            if k >= 1000 {
                xs.push(x);
            }
        }
        let (m, c) = moments(&xs);
        assert!(m[0].abs() < 0.1 && m[1].abs() < 0.1);
        assert!((c.xx - 1.0).abs() < 0.1 && (c.yy - 1.0).abs() < 0.1, "{c:?}");
        let v = rng::normal2(&mut stream(8, 0));
        let y = u_hmc_step(|_| [0.0, 0.0], [0.5, 0.5], 0.1, 2, 1.0, &mut stream(8, 0));
        let drift = linalg::axpy([0.5, 0.5], 0.2, v);
        assert!((y[0] - drift[0]).abs() < 1e-15 && (y[1] - drift[1]).abs() < 1e-15);
        let (y, w) = leapfrog(|_| [0.0, 0.0], [0.5, 0.5], [0.0, 0.0], 0.1, 2, 1.0);
        assert_eq!((y, w), ([0.5, 0.5], [0.0, 0.0]));
    }

    #[test]
    fn score_only_target_refuses_energy() {
        let t = ScoreFn(|x: Vec2| x);
        assert!(matches!(t.evaluate(&[[0.0, 0.0]], true), Err(Error::Capability(_))));
    }
}
