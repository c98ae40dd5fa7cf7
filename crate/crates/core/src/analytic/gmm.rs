use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::special::LN_2PI;
use crate::error::{Error, Result};
use crate::linalg::{self, log_sum_exp, Sym2, Vec2};
use crate::rng;
use crate::schedule::NoiseSchedule;

/// Gaussian mixture in the plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmRaw")]
pub struct Gmm {
    weights: Vec<f64>,
    means: Vec<Vec2>,
    covs: Vec<Sym2>,
}

#[derive(Deserialize)]
struct GmmRaw {
    weights: Vec<f64>,
    means: Vec<Vec2>,
    covs: Vec<Sym2>,
}

impl TryFrom<GmmRaw> for Gmm {
    type Error = Error;

    fn try_from(raw: GmmRaw) -> Result<Self> {
        Gmm::new(raw.weights, raw.means, raw.covs)
    }
}

impl Gmm {
    pub fn new(weights: Vec<f64>, means: Vec<Vec2>, covs: Vec<Sym2>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covs.len() {
            return Err(Error::Config(format!(
                "gmm needs matching non-empty weights/means/covs (got {}/{}/{})",
                weights.len(),
                means.len(),
                covs.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("gmm weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("gmm weights sum to {total}, expected 1")));
        }
        if let Some(i) = covs.iter().position(|c| !c.is_positive_definite()) {
            return Err(Error::Config(format!("gmm covariance {i} is not positive definite")));
        }
        Ok(Self { weights, means, covs })
    }

    /// Equal-weight mixture of isotropic components with a shared standard deviation.
    pub fn isotropic(means: Vec<Vec2>, std: f64) -> Result<Self> {
        let k = means.len();
        let w = vec![1.0 / k as f64; k];
        Self::new(w, means, vec![Sym2::isotropic(std * std); k])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec2] {
        &self.means
    }

    pub fn covs(&self) -> &[Sym2] {
        &self.covs
    }

    /// Marginal at level `t`: means scaled by `√ᾱ_t`, covariances `ᾱ_t Σ + σ_t² I`.
    pub fn diffuse(&self, schedule: &NoiseSchedule, t: usize) -> Gmm {
        self.diffuse_with(schedule.alpha_bar(t))
    }

    pub fn diffuse_with(&self, alpha_bar: f64) -> Gmm {
        let scale = alpha_bar.sqrt();
        Gmm {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| linalg::scale(*m, scale)).collect(),
            covs: self.covs.iter().map(|c| c.scaled(alpha_bar).add_diag(1.0 - alpha_bar)).collect(),
        }
    }

    /// Mixture of mixtures: component weights multiplied by the outer weights.
    pub fn pool(parts: &[(&Gmm, f64)]) -> Result<Gmm> {
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for (g, w) in parts {
            for i in 0..g.len() {
                weights.push(g.weights[i] * w);
                means.push(g.means[i]);
                covs.push(g.covs[i]);
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Gmm::new(weights, means, covs)
    }

    /// Normalized product `p·q`, again a mixture with one component per pair.
    pub fn product(&self, other: &Gmm) -> Result<Gmm> {
        let mut logw = Vec::with_capacity(self.len() * other.len());
        let mut means = Vec::with_capacity(logw.capacity());
        let mut covs = Vec::with_capacity(logw.capacity());
        for i in 0..self.len() {
            for j in 0..other.len() {
                let (pi, pj) = (self.covs[i].inverse(), other.covs[j].inverse());
                let cov = pi.add(&pj).inverse();
                let m = cov.mul_vec(linalg::add(pi.mul_vec(self.means[i]), pj.mul_vec(other.means[j])));
                let s = self.covs[i].add(&other.covs[j]);
                let d = linalg::sub(self.means[i], other.means[j]);
                let overlap = -LN_2PI - 0.5 * s.det().ln() - 0.5 * s.inverse().quad_form(d);
                logw.push(self.weights[i].ln() + other.weights[j].ln() + overlap);
                means.push(m);
                covs.push(cov);
            }
        }
        let lse = log_sum_exp(&logw);
        Gmm::new(logw.iter().map(|l| (l - lse).exp()).collect(), means, covs)
    }

    /// `p^k` for a positive integer `k`, by repeated products.
    pub fn power(&self, k: u32) -> Result<Gmm> {
        if k == 0 {
            return Err(Error::Argument("gmm power must be at least 1".into()));
        }
        let mut acc = self.clone();
        for _ in 1..k {
            acc = acc.product(self)?;
        }
        Ok(acc)
    }

    pub fn log_density(&self, x: Vec2) -> f64 {
        self.evaluator().log_density(x)
    }

    pub fn score(&self, x: Vec2) -> Vec2 {
        self.evaluator().log_density_and_score(x).1
    }

    /// Precomputed precisions and normalizers for repeated evaluation.
    pub fn evaluator(&self) -> GmmEvaluator {
        GmmEvaluator::new(self)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec2 {
        let k = self.pick_component(rng);
        let (l11, l21, l22) = self.covs[k].cholesky();
        let e = rng::normal2(rng);
        let m = self.means[k];
        [m[0] + l11 * e[0], m[1] + l21 * e[0] + l22 * e[1]]
    }

    fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    pub fn mean(&self) -> Vec2 {
        let mut m = [0.0; 2];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            m = linalg::axpy(m, *w, *mu);
        }
        m
    }
}

#[derive(Clone, Debug)]
struct Component {
    log_weight: f64,
    mean: Vec2,
    precision: Sym2,
    log_norm: f64,
}

/// A GMM with precisions and log-normalizers cached.
#[derive(Clone, Debug)]
pub struct GmmEvaluator {
    components: Vec<Component>,
}

impl GmmEvaluator {
    pub fn new(g: &Gmm) -> Self {
        let components = (0..g.len())
            .map(|i| Component {
                log_weight: g.weights[i].ln(),
                mean: g.means[i],
                precision: g.covs[i].inverse(),
                log_norm: -LN_2PI - 0.5 * g.covs[i].det().ln(),
            })
            .collect();
        Self { components }
    }

    /// Per-component `log w_i + log N(x; μ_i, Σ_i)`.
    fn log_terms(&self, x: Vec2, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend(self.components.iter().map(|c| {
            let d = linalg::sub(x, c.mean);
            c.log_weight + c.log_norm - 0.5 * c.precision.quad_form(d)
        }));
    }

    /// `log w_i + log N(x; μ_i, Σ_i)` for every component, in input order.
    pub fn component_log_terms(&self, x: Vec2) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.components.len());
        self.log_terms(x, &mut buf);
        buf
    }

    pub fn log_density(&self, x: Vec2) -> f64 {
        let mut buf = Vec::with_capacity(self.components.len());
        self.log_terms(x, &mut buf);
        log_sum_exp(&buf)
    }

    /// Log-density and its gradient (responsibility-weighted component scores).
    pub fn log_density_and_score(&self, x: Vec2) -> (f64, Vec2) {
        let mut buf = Vec::with_capacity(self.components.len());
        self.log_terms(x, &mut buf);
        let lse = log_sum_exp(&buf);
        let mut s = [0.0; 2];
        for (c, lt) in self.components.iter().zip(&buf) {
            let r = (lt - lse).exp();
            if r == 0.0 {
                continue;
            }
            let g = c.precision.mul_vec(linalg::sub(c.mean, x));
            s = linalg::axpy(s, r, g);
        }
        (lse, s)
    }
}

/// A GMM whose components each carry a categorical label, housing `p(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LabeledRaw")]
pub struct LabeledGmm {
    gmm: Gmm,
    labels: Vec<usize>,
    n_labels: usize,
}

#[derive(Deserialize)]
struct LabeledRaw {
    gmm: Gmm,
    labels: Vec<usize>,
    n_labels: usize,
}

impl TryFrom<LabeledRaw> for LabeledGmm {
    type Error = Error;

    fn try_from(raw: LabeledRaw) -> Result<Self> {
        LabeledGmm::new(raw.gmm, raw.labels, raw.n_labels)
    }
}

impl LabeledGmm {
    pub fn new(gmm: Gmm, labels: Vec<usize>, n_labels: usize) -> Result<Self> {
        if labels.len() != gmm.len() {
            return Err(Error::Config(format!(
                "labeled gmm has {} components but {} labels",
                gmm.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l >= n_labels) {
            return Err(Error::Config(format!("label {l} out of range 0..{n_labels}")));
        }
        for y in 0..n_labels {
            let mass: f64 = labels.iter().zip(gmm.weights()).filter(|(l, _)| **l == y).map(|(_, w)| w).sum();
            if mass <= 0.0 {
                return Err(Error::Config(format!("label {y} carries no mixture weight")));
            }
        }
        Ok(Self { gmm, labels, n_labels })
    }

    pub fn gmm(&self) -> &Gmm {
        &self.gmm
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn label_prior(&self, y: usize) -> f64 {
        self.labels.iter().zip(self.gmm.weights()).filter(|(l, _)| **l == y).map(|(_, w)| w).sum()
    }

    /// The class-conditional mixture `p(x | y)`.
    pub fn conditional(&self, y: usize) -> Result<Gmm> {
        if y >= self.n_labels {
            return Err(Error::Argument(format!("label {y} out of range 0..{}", self.n_labels)));
        }
        let prior = self.label_prior(y);
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for i in 0..self.gmm.len() {
            if self.labels[i] == y {
                weights.push(self.gmm.weights()[i] / prior);
                means.push(self.gmm.means()[i]);
                covs.push(self.gmm.covs()[i]);
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Gmm::new(weights, means, covs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_gmm(seed: u64) -> Gmm {
        let mut r = rng::stream(seed, 0);
        let k = 3;
        let mut w: Vec<f64> = (0..k).map(|_| 0.2 + r.random::<f64>()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let means = (0..k).map(|_| [r.random::<f64>() - 0.5, r.random::<f64>() - 0.5]).collect();
        let covs = (0..k)
            .map(|_| {
                let a = 0.05 + 0.1 * r.random::<f64>();
                let c = 0.05 + 0.1 * r.random::<f64>();
                let b = 0.5 * (a * c).sqrt() * (r.random::<f64>() - 0.5);
                Sym2::new(a, b, c)
            })
            .collect();
        Gmm::new(w, means, covs).unwrap()
    }

    #[test]
    fn standard_normal_at_origin() {
        let g = Gmm::isotropic(vec![[0.0, 0.0]], 1.0).unwrap();
        assert!((g.log_density([0.0, 0.0]) + LN_2PI).abs() < 1e-15);
        assert!((g.log_density([0.0, 0.0]) + 1.837877).abs() < 1e-6);
    }

    #[test]
    fn symmetric_pair_at_origin() {
        let g = Gmm::isotropic(vec![[0.4, 0.1], [-0.4, -0.1]], 0.3).unwrap();
        let single = Gmm::isotropic(vec![[0.4, 0.1]], 0.3).unwrap();
        assert!((g.log_density([0.0, 0.0]) - single.log_density([0.0, 0.0])).abs() < 1e-14);
        let s = g.score([0.0, 0.0]);
        assert!(s[0].abs() < 1e-14 && s[1].abs() < 1e-14);
    }

    #[test]
    fn far_tail_is_finite() {
        let g = random_gmm(3);
        let v = g.log_density([1e6, -3e5]);
        assert!(v.is_finite() && v < -1e9);
        assert!(linalg::is_finite(g.score([1e6, -3e5])));
    }

    #[test]
    fn single_gaussian_score() {
        let g = Gmm::isotropic(vec![[0.3, -0.2]], 0.5).unwrap();
        let x = [1.0, 0.4];
        let s = g.score(x);
        assert!((s[0] + (1.0 - 0.3) / 0.25).abs() < 1e-13);
        assert!((s[1] + (0.4 + 0.2) / 0.25).abs() < 1e-13);
    }

    #[test]
    fn score_matches_central_differences() {
        for seed in 0..5 {
            let g = random_gmm(seed);
            let mut r = rng::stream(seed, 9);
            for _ in 0..20 {
                let x = [r.random::<f64>() * 2.0 - 1.0, r.random::<f64>() * 2.0 - 1.0];
                let s = g.score(x);
                let h = 1e-5;
                for d in 0..2 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[d] += h;
                    xm[d] -= h;
                    let fd = (g.log_density(xp) - g.log_density(xm)) / (2.0 * h);
                    assert!((fd - s[d]).abs() < 1e-6, "seed {seed}: {fd} vs {}", s[d]);
                }
            }
        }
    }

    #[test]
    fn diffuse_identity_and_terminal() {
        let g = random_gmm(1);
        assert_eq!(g.diffuse_with(1.0), g);
        let d = g.diffuse_with(1e-12);
        for (m, c) in d.means().iter().zip(d.covs()) {
            assert!(linalg::norm(*m) < 1e-5);
            assert!((c.xx - 1.0).abs() < 1e-10 && (c.yy - 1.0).abs() < 1e-10 && c.xy.abs() < 1e-10);
        }
    }

    /// Moments of `√ᾱ x0 + σ ε` over 1e5 draws agree with the diffused component.
    #[test]
    fn diffused_component_matches_monte_carlo() {
        let g = Gmm::isotropic(vec![[1.0, 0.0]], 0.2).unwrap();
        let ab: f64 = 0.25;
        let d = g.diffuse_with(ab);
        assert!((d.means()[0][0] - 0.5).abs() < 1e-15);
        assert!((d.covs()[0].xx - (0.01 + 0.75)).abs() < 1e-15);
        let mut r = rng::stream(5, 0);
        let n = 100_000;
        let mut s1 = [0.0; 2];
        let mut s2 = [0.0; 2];
        for _ in 0..n {
            let x0 = g.sample(&mut r);
            let e = rng::normal2(&mut r);
            let x = [ab.sqrt() * x0[0] + (1.0 - ab).sqrt() * e[0], ab.sqrt() * x0[1] + (1.0 - ab).sqrt() * e[1]];
            for k in 0..2 {
                s1[k] += x[k];
                s2[k] += x[k] * x[k];
            }
        }
        let var = 0.76;
        for k in 0..2 {
            let m = s1[k] / n as f64;
            let v = s2[k] / n as f64 - m * m;
            let expect = [0.5, 0.0][k];
            assert!((m - expect).abs() < 3.0 * (var / n as f64).sqrt());
            assert!((v - var).abs() < 3.0 * var * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn rejects_bad_weights_and_covariances() {
        assert!(Gmm::new(vec![0.5, 0.4], vec![[0.0; 2]; 2], vec![Sym2::isotropic(1.0); 2]).is_err());
        assert!(Gmm::new(vec![1.0], vec![[0.0; 2]], vec![Sym2::new(1.0, 2.0, 1.0)]).is_err());
    }

    #[test]
    fn labeled_conditional_renormalizes() {
        let g = Gmm::new(
            vec![0.2, 0.3, 0.5],
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![Sym2::isotropic(0.1); 3],
        )
        .unwrap();
        let lg = LabeledGmm::new(g, vec![0, 1, 0], 2).unwrap();
        assert!((lg.label_prior(0) - 0.7).abs() < 1e-15);
        let c0 = lg.conditional(0).unwrap();
        assert_eq!(c0.len(), 2);
        assert!((c0.weights()[0] - 0.2 / 0.7).abs() < 1e-15);
        assert!(LabeledGmm::new(lg.gmm().clone(), vec![0, 0, 0], 2).is_err());
    }

    #[test]
    fn product_matches_pointwise_product() {
        let a = crate::analytic::presets::tempering_gmm();
        let b = Gmm::isotropic(vec![[0.1, 0.2], [-0.3, 0.0]], 0.25).unwrap();
        let p = a.product(&b).unwrap();
        let sq = a.power(2).unwrap();
        let pts = [[0.0, 0.0], [0.3, -0.1], [-0.5, 0.4]];
        let d0 = p.log_density(pts[0]) - a.log_density(pts[0]) - b.log_density(pts[0]);
        let s0 = sq.log_density(pts[0]) - 2.0 * a.log_density(pts[0]);
        for x in pts {
            assert!((p.log_density(x) - a.log_density(x) - b.log_density(x) - d0).abs() < 1e-12);
            assert!((sq.log_density(x) - 2.0 * a.log_density(x) - s0).abs() < 1e-12);
        }
        assert!(a.power(0).is_err());
    }
}
