//! Gaussian mixture fitting by expectation-maximization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::special::LN_2PI;
use crate::analytic::Gmm;
use crate::error::{Error, Result};
use crate::linalg::{self, log_sum_exp, Sym2, Vec2};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub restarts: usize,
    pub iterations: usize,
    pub covariance_floor: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { restarts: 10, iterations: 200, covariance_floor: 1e-6, tolerance: 1e-10, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub gmm: Gmm,
    pub log_likelihood: f64,
    pub degenerate_restarts: usize,
}

/// k-means++ seeding.
fn seed_means<R: Rng>(x: &[Vec2], k: usize, rng: &mut R) -> Vec<Vec2> {
    let mut means = vec![x[rng.random_range(0..x.len())]];
    let mut d2: Vec<f64> = x.iter().map(|p| linalg::norm_sq(linalg::sub(*p, means[0]))).collect();
    while means.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter().position(|d| {
                acc += d;
                acc > u
            })
            .unwrap_or(x.len() - 1)
        } else {
            rng.random_range(0..x.len())
        };
        let m = x[pick];
        means.push(m);
        for (d, p) in d2.iter_mut().zip(x) {
            *d = d.min(linalg::norm_sq(linalg::sub(*p, m)));
        }
    }
    means
}

fn sample_cov(x: &[Vec2]) -> Sym2 {
    let n = x.len() as f64;
    let m = [x.iter().map(|p| p[0]).sum::<f64>() / n, x.iter().map(|p| p[1]).sum::<f64>() / n];
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for p in x {
        let d = linalg::sub(*p, m);
        a += d[0] * d[0];
        b += d[0] * d[1];
        c += d[1] * d[1];
    }
    Sym2::new(a / n, b / n, c / n)
}

/// Weights, means, covariances and final log-likelihood.
type Fit = (Vec<f64>, Vec<Vec2>, Vec<Sym2>, f64);

/// One EM run; `None` when a component empties.
fn run(x: &[Vec2], k: usize, cfg: &EmConfig, rng: &mut rng::ChainRng) -> Option<Fit> {
    let n = x.len();
    let mut means = seed_means(x, k, rng);
    let init = sample_cov(x).scaled(1.0 / (k * k) as f64).add_diag(cfg.covariance_floor);
    let mut covs = vec![init; k];
    let mut weights = vec![1.0 / k as f64; k];
    let mut resp = vec![0.0; n * k];
    let mut prev = f64::NEG_INFINITY;
    let mut ll = f64::NEG_INFINITY;
    let mut terms = vec![0.0; k];
    for _ in 0..cfg.iterations {
        let comps: Vec<(f64, Sym2, Vec2)> = (0..k)
            .map(|j| (weights[j].ln() - LN_2PI - 0.5 * covs[j].det().ln(), covs[j].inverse(), means[j]))
            .collect();
        ll = 0.0;
        for i in 0..n {
            for (j, (c, p, m)) in comps.iter().enumerate() {
                terms[j] = c - 0.5 * p.quad_form(linalg::sub(x[i], *m));
            }
            let lse = log_sum_exp(&terms);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (terms[j] - lse).exp();
            }
        }
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if !(nk > 1.0) {
                return None;
            }
            let mut m = [0.0; 2];
            for i in 0..n {
                m = linalg::axpy(m, resp[i * k + j], x[i]);
            }
            m = linalg::scale(m, 1.0 / nk);
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let d = linalg::sub(x[i], m);
                let r = resp[i * k + j];
                a += r * d[0] * d[0];
                b += r * d[0] * d[1];
                c += r * d[1] * d[1];
            }
            weights[j] = nk / n as f64;
            means[j] = m;
            covs[j] = Sym2::new(a / nk, b / nk, c / nk).add_diag(cfg.covariance_floor);
            if !covs[j].is_positive_definite() {
                return None;
            }
        }
        if (ll - prev).abs() <= cfg.tolerance * n as f64 {
            break;
        }
        prev = ll;
    }
    Some((weights, means, covs, ll))
}

/// Best-likelihood `k`-component fit over `cfg.restarts` seeded restarts.
pub fn fit_gmm(x: &[Vec2], k: usize, cfg: &EmConfig) -> Result<EmFit> {
    if k == 0 || x.len() < 2 * k {
        return Err(Error::Argument(format!("cannot fit {k} components to {} points", x.len())));
    }
    let mut best: Option<Fit> = None;
    let mut degenerate = 0;
    for r in 0..cfg.restarts {
        let mut rng = rng::stream(cfg.seed, r as u64);
        match run(x, k, cfg, &mut rng) {
            Some(fit) => {
                if best.as_ref().is_none_or(|b| fit.3 > b.3) {
                    best = Some(fit);
                }
            }
            None => degenerate += 1,
        }
    }
    let (w, m, c, ll) = best.ok_or_else(|| Error::Metric(format!("all {} EM restarts degenerated", cfg.restarts)))?;
    let total: f64 = w.iter().sum();
    let w = w.iter().map(|v| v / total).collect();
    Ok(EmFit { gmm: Gmm::new(w, m, c)?, log_likelihood: ll, degenerate_restarts: degenerate })
}

/// Per-component `(Σ_xx, Σ_yy)`, components ordered by mean lexicographically.
pub fn sorted_variances(g: &Gmm) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..g.len()).collect();
    idx.sort_by(|a, b| {
        let (ma, mb) = (g.means()[*a], g.means()[*b]);
        ma[0].total_cmp(&mb[0]).then(ma[1].total_cmp(&mb[1]))
    });
    idx.iter().flat_map(|i| [g.covs()[*i].xx, g.covs()[*i].yy]).collect()
}

/// L2 distance between the sorted component variances of `k`-component fits
/// to `x` and to `truth`.
pub fn var_metric(x: &[Vec2], truth: &[Vec2], k: usize, cfg: &EmConfig) -> Result<f64> {
    let a = sorted_variances(&fit_gmm(x, k, cfg)?.gmm);
    let b = sorted_variances(&fit_gmm(truth, k, cfg)?.gmm);
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
}
