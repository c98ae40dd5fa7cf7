use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::gmm::{Gmm, GmmEvaluator, LabeledGmm};
use crate::analytic::uniform_box::UniformBox;
use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::model::ScoreModel;
use crate::schedule::NoiseSchedule;

/// A base distribution with a closed-form diffusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticBase {
    Gmm(Gmm),
    Box(UniformBox),
    /// `p(x, y)` marginalized over `y`, or the class-conditional `p(x | y)`
    /// when `label` is set.
    Labeled {
        model: LabeledGmm,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<usize>,
    },
}

impl AnalyticBase {
    /// The mixture that describes this base, if it is one.
    pub fn as_gmm(&self) -> Result<Option<Gmm>> {
        Ok(match self {
            AnalyticBase::Gmm(g) => Some(g.clone()),
            AnalyticBase::Box(_) => None,
            AnalyticBase::Labeled { model, label: None } => Some(model.gmm().clone()),
            AnalyticBase::Labeled { model, label: Some(y) } => Some(model.conditional(*y)?),
        })
    }
}

#[derive(Clone)]
enum Level {
    Gmm(GmmEvaluator),
    Box { scale: f64, sigma: f64 },
}

/// Exact diffused marginals `q_t` of an [`AnalyticBase`], valid for `t ∈ 0..=T`.
#[derive(Clone)]
pub struct AnalyticModel {
    name: String,
    base: AnalyticBase,
    gmm: Option<Gmm>,
    schedule: NoiseSchedule,
    levels: Vec<Level>,
}

impl fmt::Debug for AnalyticModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticModel").field("name", &self.name).field("base", &self.base).finish()
    }
}

impl AnalyticModel {
    pub fn new(name: impl Into<String>, base: AnalyticBase, schedule: NoiseSchedule) -> Result<Self> {
        let gmm = base.as_gmm()?;
        let levels = (0..=schedule.steps())
            .map(|t| match (&gmm, &base) {
                (Some(g), _) => Level::Gmm(g.diffuse(&schedule, t).evaluator()),
                (None, _) => Level::Box { scale: schedule.alpha_bar(t).sqrt(), sigma: schedule.sigma(t) },
            })
            .collect();
        Ok(Self { name: name.into(), base, gmm, schedule, levels })
    }

    pub fn gmm(name: impl Into<String>, g: Gmm, schedule: NoiseSchedule) -> Self {
        Self::new(name, AnalyticBase::Gmm(g), schedule).expect("gmm bases always build")
    }

    pub fn uniform_box(name: impl Into<String>, b: UniformBox, schedule: NoiseSchedule) -> Self {
        Self::new(name, AnalyticBase::Box(b), schedule).expect("box bases always build")
    }

    pub fn labeled(name: impl Into<String>, g: LabeledGmm, label: Option<usize>, schedule: NoiseSchedule) -> Result<Self> {
        Self::new(name, AnalyticBase::Labeled { model: g, label }, schedule)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base(&self) -> &AnalyticBase {
        &self.base
    }

    /// Same base under another schedule.
    pub fn with_schedule(&self, schedule: NoiseSchedule) -> Self {
        Self::new(self.name.clone(), self.base.clone(), schedule).expect("base already validated")
    }

    /// The base as a mixture (a box is not one).
    pub fn base_gmm(&self) -> Option<&Gmm> {
        self.gmm.as_ref()
    }

    /// The diffused mixture at level `t`, for mixture bases.
    pub fn diffused_gmm(&self, t: usize) -> Option<Gmm> {
        self.gmm.as_ref().map(|g| g.diffuse(&self.schedule, t))
    }

    fn level(&self, t: usize) -> Result<&Level> {
        self.levels.get(t).ok_or(Error::TimeIndex { t, steps: self.schedule.steps() })
    }

    /// Exact `log q_t(x)`.
    pub fn log_density(&self, x: Vec2, t: usize) -> Result<f64> {
        Ok(self.eval_point(self.level(t)?, x, t).0)
    }

    pub fn log_density_and_score(&self, x: Vec2, t: usize) -> Result<(f64, Vec2)> {
        Ok(self.eval_point(self.level(t)?, x, t))
    }

    fn eval_point(&self, level: &Level, x: Vec2, t: usize) -> (f64, Vec2) {
        match level {
            Level::Gmm(e) => e.log_density_and_score(x),
            Level::Box { scale, sigma } => {
                let AnalyticBase::Box(b) = &self.base else { unreachable!() };
                if t == 0 {
                    (b.log_density0(x), [0.0, 0.0])
                } else {
                    b.diffused(x, *scale, *sigma)
                }
            }
        }
    }

    /// Exact draw from the undiffused base.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec2 {
        match (&self.gmm, &self.base) {
            (Some(g), _) => g.sample(rng),
            (None, AnalyticBase::Box(b)) => b.sample(rng),
            _ => unreachable!(),
        }
    }
}

impl ScoreModel for AnalyticModel {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn has_energy(&self) -> bool {
        true
    }

    fn min_level(&self) -> usize {
        0
    }

    fn score(&self, xs: &[Vec2], t: usize) -> Result<Vec<Vec2>> {
        let level = self.level(t)?;
        Ok(xs.iter().map(|x| self.eval_point(level, *x, t).1).collect())
    }

    fn energy_and_score(&self, xs: &[Vec2], t: usize) -> Result<(Vec<f64>, Vec<Vec2>)> {
        let level = self.level(t)?;
        Ok(xs.iter().map(|x| self.eval_point(level, *x, t)).unzip())
    }

    fn as_analytic(&self) -> Option<&AnalyticModel> {
        Some(self)
    }

    fn describe(&self) -> String {
        let kind = match &self.base {
            AnalyticBase::Gmm(g) => format!("gmm[{}]", g.len()),
            AnalyticBase::Box(_) => "box".to_string(),
            AnalyticBase::Labeled { label: None, .. } => "labeled".to_string(),
            AnalyticBase::Labeled { label: Some(y), .. } => format!("labeled|y={y}"),
        };
        format!("{}:{kind}", self.name)
    }
}

/// The exact noisy classifier `log p_t(y | x)` of a [`LabeledGmm`].
#[derive(Clone)]
pub struct ClassifierModel {
    label: usize,
    log_prior: f64,
    joint: AnalyticModel,
    conditional: AnalyticModel,
}

impl fmt::Debug for ClassifierModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassifierModel").field("label", &self.label).finish()
    }
}

impl ClassifierModel {
    pub fn new(g: LabeledGmm, label: usize, schedule: NoiseSchedule) -> Result<Self> {
        let log_prior = g.label_prior(label).ln();
        let conditional = AnalyticModel::labeled("cond", g.clone(), Some(label), schedule.clone())?;
        let joint = AnalyticModel::labeled("joint", g, None, schedule)?;
        Ok(Self { label, log_prior, joint, conditional })
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn labeled_gmm(&self) -> &LabeledGmm {
        match self.joint.base() {
            AnalyticBase::Labeled { model, .. } => model,
            _ => unreachable!("classifier joint is always labeled"),
        }
    }

    pub fn with_schedule(&self, schedule: NoiseSchedule) -> Self {
        Self::new(self.labeled_gmm().clone(), self.label, schedule).expect("already validated")
    }

    /// `log p_t(y | x) = log p_t(x | y) + log p(y) − log p_t(x)` and its gradient.
    pub fn log_posterior_and_grad(&self, x: Vec2, t: usize) -> Result<(f64, Vec2)> {
        let (lc, sc) = self.conditional.log_density_and_score(x, t)?;
        let (lj, sj) = self.joint.log_density_and_score(x, t)?;
        Ok((lc + self.log_prior - lj, [sc[0] - sj[0], sc[1] - sj[1]]))
    }

    /// Posterior over every label at level `t`.
    pub fn posterior(g: &LabeledGmm, schedule: &NoiseSchedule, t: usize, x: Vec2) -> Result<Vec<f64>> {
        schedule.check_level(t).or_else(|e| if t == 0 { Ok(()) } else { Err(e) })?;
        let d = g.gmm().diffuse(schedule, t).evaluator();
        let logs = d.component_log_terms(x);
        let lse = crate::linalg::log_sum_exp(&logs);
        Ok((0..g.n_labels())
            .map(|y| {
                let own: Vec<f64> = g.labels().iter().zip(&logs).filter(|(l, _)| **l == y).map(|(_, v)| *v).collect();
                (crate::linalg::log_sum_exp(&own) - lse).exp()
            })
            .collect())
    }
}

impl ScoreModel for ClassifierModel {
    fn schedule(&self) -> &NoiseSchedule {
        self.joint.schedule()
    }

    fn has_energy(&self) -> bool {
        true
    }

    fn min_level(&self) -> usize {
        0
    }

    fn score(&self, xs: &[Vec2], t: usize) -> Result<Vec<Vec2>> {
        xs.iter().map(|x| Ok(self.log_posterior_and_grad(*x, t)?.1)).collect()
    }

    fn energy_and_score(&self, xs: &[Vec2], t: usize) -> Result<(Vec<f64>, Vec<Vec2>)> {
        let pairs: Result<Vec<_>> = xs.iter().map(|x| self.log_posterior_and_grad(*x, t)).collect();
        Ok(pairs?.into_iter().unzip())
    }

    fn as_classifier(&self) -> Option<&ClassifierModel> {
        Some(self)
    }

    fn describe(&self) -> String {
        format!("classifier|y={}", self.label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::presets;
    use crate::linalg::Sym2;
    use crate::rng;

    fn fd_check(m: &dyn ScoreModel, t: usize, seed: u64) {
        let mut r = rng::stream(seed, t as u64);
        for _ in 0..100 {
            let x = [r.random::<f64>() * 2.4 - 1.2, r.random::<f64>() * 2.4 - 1.2];
            let (_, s) = m.energy_and_score(&[x], t).unwrap();
            let h = 1e-6;
            for d in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[d] += h;
                xm[d] -= h;
                let e = m.energy(&[xp, xm], t).unwrap();
                let fd = (e[0] - e[1]) / (2.0 * h);
                assert!((fd - s[0][d]).abs() < 1e-6 * (1.0 + s[0][d].abs()), "{} t={t}: {fd} vs {}", m.describe(), s[0][d]);
            }
        }
    }

    #[test]
    fn scores_are_gradients_of_log_density() {
        let s = NoiseSchedule::linear_default(100).unwrap();
        let models: Vec<Box<dyn ScoreModel>> = vec![
            Box::new(AnalyticModel::gmm("ring", presets::ring_gmm(), s.clone())),
            Box::new(AnalyticModel::uniform_box("box", presets::product_box(), s.clone())),
            Box::new(AnalyticModel::labeled("lab", presets::labeled_gmm(), Some(1), s.clone()).unwrap()),
            Box::new(ClassifierModel::new(presets::labeled_gmm(), 0, s.clone()).unwrap()),
        ];
        for m in &models {
            for t in [1, 50, 100] {
                fd_check(m.as_ref(), t, 3);
            }
        }
    }

    #[test]
    fn classifier_posterior_properties() {
        let s = NoiseSchedule::linear_default(100).unwrap();
        let single = LabeledGmm::new(presets::ring_gmm(), vec![0; 8], 1).unwrap();
        let p = ClassifierModel::posterior(&single, &s, 30, [0.2, -0.1]).unwrap();
        assert_eq!(p, vec![1.0]);
        let sym = LabeledGmm::new(
            Gmm::new(vec![0.5, 0.5], vec![[-0.5, 0.0], [0.5, 0.0]], vec![Sym2::isotropic(0.04); 2]).unwrap(),
            vec![0, 1],
            2,
        )
        .unwrap();
        let p = ClassifierModel::posterior(&sym, &s, 10, [0.0, 0.7]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let g = presets::labeled_gmm();
        for t in [0, 20, 100] {
            let p = ClassifierModel::posterior(&g, &s, t, [0.1, 0.3]).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classifier_gradient_is_bayes_difference() {
        let s = NoiseSchedule::linear_default(100).unwrap();
        let g = presets::labeled_gmm();
        let c = ClassifierModel::new(g.clone(), 1, s.clone()).unwrap();
        let cond = AnalyticModel::labeled("c", g.clone(), Some(1), s.clone()).unwrap();
        let joint = AnalyticModel::labeled("j", g.clone(), None, s.clone()).unwrap();
        let x = [0.13, -0.42];
        let t = 40;
        let h = 1e-6;
        for d in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[d] += h;
            xm[d] -= h;
            let p = |z: Vec2| ClassifierModel::posterior(&g, &s, t, z).unwrap()[1].ln();
            let fd = (p(xp) - p(xm)) / (2.0 * h);
            let diff = cond.log_density_and_score(x, t).unwrap().1[d] - joint.log_density_and_score(x, t).unwrap().1[d];
            assert!((fd - diff).abs() < 1e-6);
            assert!((c.log_posterior_and_grad(x, t).unwrap().1[d] - diff).abs() < 1e-12);
        }
    }

    #[test]
    fn box_at_level_zero_is_indicator() {
        let s = NoiseSchedule::linear_default(10).unwrap();
        let m = AnalyticModel::uniform_box("b", presets::product_box(), s);
        assert!((m.log_density([0.0, 0.5], 0).unwrap() + 0.4f64.ln()).abs() < 1e-15);
        assert_eq!(m.log_density([0.2, 0.5], 0).unwrap(), f64::NEG_INFINITY);
        assert!(m.log_density([0.0, 0.0], 11).is_err());
    }
}
