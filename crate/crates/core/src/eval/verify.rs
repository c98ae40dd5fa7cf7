//! Checks of which score compositions are exact under diffusion.
//!
//! Identity claims compare a composed score against a closed-form reference.
//! Gap claims compare a tree's composed score at level `t` against the score
//! of the diffusion of that same tree's `t = 0` density.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{AnalyticModel, ClassifierModel, Gmm, GmmEvaluator, GridOracle, GridSpec, LabeledGmm, UniformBox};
use crate::compose::CompositionTree;
use crate::error::{Error, Result};
use crate::eval::oracle::{composed_grid, tree_as_gmm};
use crate::linalg::{self, Vec2};
use crate::model::ScoreModel;
use crate::rng;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    EqualityHolds,
    EqualityFails,
    GapConfirmed,
    GapNotConfirmed,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative L2 bound for identity claims.
    pub equality: f64,
    /// Per-probe relative gap threshold.
    pub gap: f64,
    /// Required share of mid-level probes above `gap`.
    pub mid_fraction: f64,
    /// Required share of lowest-level probes below `gap`.
    pub low_fraction: f64,
    /// Share of lowest-density probes dropped before gap statistics.
    pub tail_drop: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { equality: 1e-9, gap: 0.05, mid_fraction: 0.1, low_fraction: 0.9, tail_drop: 0.01 }
    }
}

/// One probe of one claim.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub t: usize,
    pub x: Vec2,
    pub reference: Vec2,
    pub composed: Vec2,
    pub rel_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claim: String,
    pub expected: Verdict,
    pub verdict: Verdict,
    pub t_values: Vec<usize>,
    pub probes_per_t: usize,
    /// Relative L2 discrepancy over all probes, per entry of `t_values`.
    pub discrepancy: Vec<f64>,
    /// Share of probes with a relative gap above the threshold, per level.
    pub gap_fraction: Vec<f64>,
    pub reference: String,
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    #[serde(skip)]
    pub probes: Vec<ProbeRow>,
}

impl ClaimRecord {
    pub fn passed(&self) -> bool {
        self.verdict == self.expected
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub claims: Vec<ClaimRecord>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.claims.iter().all(ClaimRecord::passed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Probe-level data of every claim.
    pub fn probes_csv(&self) -> String {
        let mut out = String::from("claim,t,x0,x1,ref0,ref1,comp0,comp1,rel_gap\n");
        for c in &self.claims {
            for p in &c.probes {
                writeln!(
                    out,
                    "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    c.claim, p.t, p.x[0], p.x[1], p.reference[0], p.reference[1], p.composed[0], p.composed[1], p.rel_gap
                )
                .expect("write to string");
            }
        }
        out
    }
}

fn rel_l2(pairs: &[(Vec2, Vec2)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in pairs {
        num += linalg::norm_sq(linalg::sub(*a, *b));
        den += linalg::norm_sq(*b);
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

fn rel_gap(composed: Vec2, reference: Vec2) -> f64 {
    let d = linalg::norm(linalg::sub(composed, reference));
    let r = linalg::norm(reference);
    if r > 0.0 {
        d / r
    } else if d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Levels `1, T/4, T/2, T` without duplicates.
pub fn identity_levels(steps: usize) -> Vec<usize> {
    let mut t = vec![1, (steps / 4).max(1), (steps / 2).max(1), steps];
    t.dedup();
    t
}

fn probe_stream(seed: u64, claim: u64, t: usize) -> rng::ChainRng {
    rng::stream(seed, (claim << 32) | t as u64)
}

fn identity_claim(
    claim: &str,
    id: u64,
    s: &NoiseSchedule,
    composed: &dyn ScoreModel,
    reference: &Gmm,
    n: usize,
    seed: u64,
) -> Result<ClaimRecord> {
    let tol = Tolerances::default();
    let t_values = identity_levels(s.steps());
    let mut discrepancy = Vec::new();
    let mut probes = Vec::new();
    for &t in &t_values {
        let g = reference.diffuse(s, t);
        let ev = g.evaluator();
        let mut r = probe_stream(seed, id, t);
        let xs: Vec<Vec2> = (0..n).map(|_| g.sample(&mut r)).collect();
        let got = composed.score(&xs, t)?;
        let pairs: Vec<(Vec2, Vec2)> = xs.iter().zip(&got).map(|(x, c)| (*c, ev.log_density_and_score(*x).1)).collect();
        discrepancy.push(rel_l2(&pairs));
        probes.extend(xs.iter().zip(&pairs).map(|(x, (c, r))| ProbeRow {
            t,
            x: *x,
            reference: *r,
            composed: *c,
            rel_gap: rel_gap(*c, *r),
        }));
    }
    let holds = discrepancy.iter().all(|d| *d <= tol.equality);
    Ok(ClaimRecord {
        claim: claim.into(),
        expected: Verdict::EqualityHolds,
        verdict: if holds { Verdict::EqualityHolds } else { Verdict::EqualityFails },
        t_values,
        probes_per_t: n,
        discrepancy,
        gap_fraction: Vec::new(),
        reference: "closed_form".into(),
        tolerances: tol,
        diagnostic: None,
        probes,
    })
}

/// Mixture of analytic mixtures against the pooled mixture.
pub fn verify_mixture_identity(
    models: &[Gmm],
    weights: &[f64],
    s: &NoiseSchedule,
    n_probes: usize,
    seed: u64,
) -> Result<ClaimRecord> {
    let leaves = models
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let name = format!("m{i}");
            CompositionTree::leaf(name.clone(), Arc::new(AnalyticModel::gmm(name, g.clone(), s.clone())))
        })
        .collect();
    let tree = CompositionTree::mixture(leaves, weights.to_vec())?;
    let pairs: Vec<(&Gmm, f64)> = models.iter().zip(weights.iter().copied()).collect();
    let pooled = Gmm::pool(&pairs)?;
    identity_claim("mixture_identity", 1, s, &tree, &pooled, n_probes, seed)
}

/// `∇log p_t(x) + ∇log p_t(y|x)` against the conditional `∇log p_t(x|y)`.
pub fn verify_guidance_identity(
    labeled: &LabeledGmm,
    y: usize,
    s: &NoiseSchedule,
    n_probes: usize,
    seed: u64,
) -> Result<ClaimRecord> {
    let joint = CompositionTree::leaf("joint", Arc::new(AnalyticModel::labeled("joint", labeled.clone(), None, s.clone())?));
    let cls = CompositionTree::leaf("classifier", Arc::new(ClassifierModel::new(labeled.clone(), y, s.clone())?));
    let tree = CompositionTree::guidance_explicit(joint, cls, 1.0)?;
    identity_claim("guidance_identity", 2, s, &tree, &labeled.conditional(y)?, n_probes, seed)
}

/// Data density of a tree, diffusable exactly.
enum Truth {
    Gmm(Gmm),
    Grid(GridOracle),
}

enum DiffusedTruth<'a> {
    Gmm(GmmEvaluator),
    Grid(crate::analytic::DiffusedGrid<'a>),
}

impl DiffusedTruth<'_> {
    fn log_density_and_score(&self, y: Vec2) -> (f64, Vec2) {
        match self {
            DiffusedTruth::Gmm(e) => e.log_density_and_score(y),
            DiffusedTruth::Grid(g) => g.log_density_and_score(y),
        }
    }
}

impl Truth {
    fn of(tree: &CompositionTree, spec: GridSpec) -> Result<Self> {
        if let Some(g) = tree_as_gmm(tree) {
            return Ok(Truth::Gmm(g));
        }
        if tree.min_level() > 0 {
            return Err(Error::Unsupported(format!("{} has no level-0 density", tree.describe())));
        }
        Ok(Truth::Grid(composed_grid(tree, 0, spec)?))
    }

    fn label(&self) -> &'static str {
        match self {
            Truth::Gmm(_) => "closed_form",
            Truth::Grid(_) => "grid",
        }
    }

    fn sample<R: Rng>(&self, r: &mut R) -> Vec2 {
        match self {
            Truth::Gmm(g) => g.sample(r),
            Truth::Grid(g) => g.sample(r),
        }
    }

    fn diffused(&self, s: &NoiseSchedule, t: usize) -> Result<DiffusedTruth<'_>> {
        Ok(match self {
            Truth::Gmm(g) => DiffusedTruth::Gmm(g.diffuse(s, t).evaluator()),
            Truth::Grid(g) => DiffusedTruth::Grid(g.diffused(s.alpha_bar(t).sqrt(), s.sigma(t))?),
        })
    }
}

/// Gap claim for any analytic tree.
pub fn verify_gap(claim: &str, tree: &CompositionTree, n_probes: usize, seed: u64, spec: GridSpec) -> Result<ClaimRecord> {
    let tol = Tolerances::default();
    let s = tree.schedule().clone();
    let t_values = vec![(s.steps() / 2).max(1), 1];
    let truth = Truth::of(tree, spec)?;
    let mut record = ClaimRecord {
        claim: claim.into(),
        expected: Verdict::GapConfirmed,
        verdict: Verdict::Inconclusive,
        t_values: t_values.clone(),
        probes_per_t: n_probes,
        discrepancy: Vec::new(),
        gap_fraction: Vec::new(),
        reference: truth.label().into(),
        tolerances: tol.clone(),
        diagnostic: None,
        probes: Vec::new(),
    };
    if let Truth::Grid(g) = &truth {
        if g.boundary_warning() {
            record.diagnostic = Some(format!("grid boundary carries mass {:.2e}", g.boundary_mass()));
            return Ok(record);
        }
    }
    let id = claim.bytes().fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64)) & 0xffff;
    for &t in &t_values {
        let d = truth.diffused(&s, t)?;
        let (scale, sigma) = (s.alpha_bar(t).sqrt(), s.sigma(t));
        let mut r = probe_stream(seed, id, t);
        let mut probes: Vec<(f64, Vec2, Vec2)> = (0..n_probes)
            .map(|_| {
                let x0 = truth.sample(&mut r);
                let y = linalg::axpy(linalg::scale(x0, scale), sigma, rng::normal2(&mut r));
                let (l, sc) = d.log_density_and_score(y);
                (l, y, sc)
            })
            .collect();
        probes.sort_by(|a, b| b.0.total_cmp(&a.0));
        probes.truncate(n_probes - (tol.tail_drop * n_probes as f64).floor() as usize);
        let xs: Vec<Vec2> = probes.iter().map(|p| p.1).collect();
        let composed = tree.score(&xs, t)?;
        let rows: Vec<ProbeRow> = probes
            .iter()
            .zip(&composed)
            .map(|(p, c)| ProbeRow { t, x: p.1, reference: p.2, composed: *c, rel_gap: rel_gap(*c, p.2) })
            .collect();
        let pairs: Vec<(Vec2, Vec2)> = rows.iter().map(|p| (p.composed, p.reference)).collect();
        record.discrepancy.push(rel_l2(&pairs));
        let above = rows.iter().filter(|p| p.rel_gap > tol.gap).count();
        record.gap_fraction.push(above as f64 / rows.len().max(1) as f64);
        record.probes.extend(rows);
    }
    let (mid, low) = (record.gap_fraction[0], record.gap_fraction[1]);
    record.verdict = if mid >= tol.mid_fraction && 1.0 - low >= tol.low_fraction {
        Verdict::GapConfirmed
    } else {
        Verdict::GapNotConfirmed
    };
    Ok(record)
}

fn analytic_leaf(name: &str, m: AnalyticModel) -> CompositionTree {
    CompositionTree::leaf(name, Arc::new(m))
}

/// Sum of diffused scores against the diffused product.
pub fn verify_product_gap(
    a: CompositionTree,
    b: CompositionTree,
    n_probes: usize,
    seed: u64,
    spec: GridSpec,
) -> Result<ClaimRecord> {
    verify_gap("product_gap", &CompositionTree::product(vec![a, b])?, n_probes, seed, spec)
}

/// `λ·∇log q_t` against the score of the diffused `q^λ`.
pub fn verify_tempering_gap(
    q: CompositionTree,
    lambda: f64,
    n_probes: usize,
    seed: u64,
    spec: GridSpec,
) -> Result<ClaimRecord> {
    verify_gap("tempering_gap", &CompositionTree::temper(q, lambda)?, n_probes, seed, spec)
}

/// `∇log p_t(x) + λ∇log p_t(y|x)` against the diffusion of `p(x)p(y|x)^λ`.
pub fn verify_annealed_guidance_gap(
    labeled: &LabeledGmm,
    y: usize,
    lambda: f64,
    s: &NoiseSchedule,
    n_probes: usize,
    seed: u64,
    spec: GridSpec,
) -> Result<ClaimRecord> {
    let joint = analytic_leaf("joint", AnalyticModel::labeled("joint", labeled.clone(), None, s.clone())?);
    let cls = CompositionTree::leaf("classifier", Arc::new(ClassifierModel::new(labeled.clone(), y, s.clone())?));
    let tree = CompositionTree::guidance_explicit(joint, cls, lambda)?;
    verify_gap("annealed_guidance_gap", &tree, n_probes, seed, spec)
}

/// Inputs of the standard five-claim suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub mixture: Vec<Gmm>,
    pub mixture_weights: Vec<f64>,
    pub product: (Gmm, UniformBox),
    pub tempering: Gmm,
    pub tempering_lambda: f64,
    pub labeled: LabeledGmm,
    pub label: usize,
    pub guidance_lambda: f64,
    pub probes: usize,
    pub grid: GridSpec,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        use crate::analytic::presets;
        let (a, b) = presets::mixture_pair();
        Self {
            mixture: vec![a, b],
            mixture_weights: vec![0.3, 0.7],
            product: (presets::ring_gmm(), presets::product_box()),
            tempering: presets::tempering_gmm(),
            tempering_lambda: 2.0,
            labeled: presets::labeled_gmm(),
            label: 1,
            guidance_lambda: 3.0,
            probes: 1000,
            grid: GridSpec::default(),
        }
    }
}

/// Mixture and guidance identities, then product, tempering and annealed
/// guidance gaps.
pub fn verification_suite(s: &NoiseSchedule, cfg: &SuiteConfig, seed: u64) -> Result<VerificationReport> {
    let n = cfg.probes;
    let ring = analytic_leaf("ring", AnalyticModel::gmm("ring", cfg.product.0.clone(), s.clone()));
    let bx = analytic_leaf("box", AnalyticModel::uniform_box("box", cfg.product.1, s.clone()));
    let q = analytic_leaf("q", AnalyticModel::gmm("q", cfg.tempering.clone(), s.clone()));
    let claims = vec![
        verify_mixture_identity(&cfg.mixture, &cfg.mixture_weights, s, n, seed)?,
        verify_guidance_identity(&cfg.labeled, cfg.label, s, n, seed)?,
        verify_product_gap(ring, bx, n, seed, cfg.grid)?,
        verify_tempering_gap(q, cfg.tempering_lambda, n, seed, cfg.grid)?,
        verify_annealed_guidance_gap(&cfg.labeled, cfg.label, cfg.guidance_lambda, s, n, seed, cfg.grid)?,
    ];
    Ok(VerificationReport { seed, claims })
}
