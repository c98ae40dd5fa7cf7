//! Expression trees over score models: products, mixtures, negation,
//! tempering, guidance and multi-condition products.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Vec2};
use crate::model::{no_energy, ScoreModel};
use crate::schedule::NoiseSchedule;

pub const DEFAULT_NEGATION_ALPHA: f64 = 0.5;

/// The likelihood part of a guidance node.
#[derive(Clone, Debug)]
pub enum LikelihoodTerm {
    /// A model of `log p_t(y | x)` (a noisy classifier).
    Explicit(Box<CompositionTree>),
    /// `log p_t(x | y) − log p_t(x)` from a conditional/unconditional pair.
    Implicit { conditional: Box<CompositionTree>, unconditional: Box<CompositionTree> },
}

#[derive(Clone, Debug)]
pub enum Node {
    Leaf { name: String, model: Arc<dyn ScoreModel> },
    Product(Vec<CompositionTree>),
    Mixture { children: Vec<CompositionTree>, weights: Vec<f64> },
    Negation { positive: Box<CompositionTree>, negative: Box<CompositionTree>, alpha: f64 },
    Temper { child: Box<CompositionTree>, lambda: f64 },
    Guidance { prior: Box<CompositionTree>, term: LikelihoodTerm, lambda: f64 },
    ConditionalProduct { unconditional: Box<CompositionTree>, conditionals: Vec<CompositionTree> },
}

/// An immutable composition; `has_energy` is fixed at construction.
#[derive(Clone)]
pub struct CompositionTree {
    node: Node,
    has_energy: bool,
    min_level: usize,
    schedule: NoiseSchedule,
}

impl fmt::Debug for CompositionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CompositionTree({})", self.describe())
    }
}

fn shared_schedule<'a>(children: impl IntoIterator<Item = &'a CompositionTree>) -> Result<NoiseSchedule> {
    let mut it = children.into_iter();
    let first = it.next().ok_or_else(|| Error::Config("composition needs at least one child".into()))?;
    for c in it {
        if c.schedule != first.schedule {
            return Err(Error::Config(format!(
                "schedule mismatch between `{}` and `{}`",
                first.describe(),
                c.describe()
            )));
        }
    }
    Ok(first.schedule.clone())
}

fn check_factor(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite, got {v}")))
    }
}

impl CompositionTree {
    fn from_node(node: Node, children: &[&CompositionTree]) -> Result<Self> {
        let schedule = shared_schedule(children.iter().copied())?;
        let has_energy = children.iter().all(|c| c.has_energy);
        let min_level = children.iter().map(|c| c.min_level).max().unwrap_or(1);
        Ok(Self { node, has_energy, min_level, schedule })
    }

    pub fn leaf(name: impl Into<String>, model: Arc<dyn ScoreModel>) -> Self {
        Self {
            has_energy: model.has_energy(),
            min_level: model.min_level(),
            schedule: model.schedule().clone(),
            node: Node::Leaf { name: name.into(), model },
        }
    }

    pub fn product(children: Vec<CompositionTree>) -> Result<Self> {
        let refs: Vec<&CompositionTree> = children.iter().collect();
        let mut t = Self::from_node(Node::Product(Vec::new()), &refs)?;
        t.node = Node::Product(children);
        Ok(t)
    }

    /// Mixture with weights on the simplex. Every child must expose an energy.
    pub fn mixture(children: Vec<CompositionTree>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != children.len() {
            return Err(Error::Config(format!("mixture has {} children but {} weights", children.len(), weights.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights {weights:?} are not on the simplex")));
        }
        if let Some(name) = children.iter().find_map(|c| c.first_energyless_leaf()) {
            return Err(Error::Capability(format!("mixture needs energies but leaf `{name}` has a score only")));
        }
        let refs: Vec<&CompositionTree> = children.iter().collect();
        let mut t = Self::from_node(Node::Product(Vec::new()), &refs)?;
        t.node = Node::Mixture { children, weights };
        Ok(t)
    }

    pub fn uniform_mixture(children: Vec<CompositionTree>) -> Result<Self> {
        let n = children.len();
        Self::mixture(children, vec![1.0 / n.max(1) as f64; n])
    }

    /// `q_pos / q_neg^α` with `α ∈ (0, 1]`.
    pub fn negation(positive: CompositionTree, negative: CompositionTree, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("negation alpha must lie in (0, 1], got {alpha}")));
        }
        let mut t = Self::from_node(Node::Product(Vec::new()), &[&positive, &negative])?;
        t.node = Node::Negation { positive: Box::new(positive), negative: Box::new(negative), alpha };
        Ok(t)
    }

    /// `q^λ`, λ > 0.
    pub fn temper(child: CompositionTree, lambda: f64) -> Result<Self> {
        check_factor("temper lambda", lambda)?;
        if lambda <= 0.0 {
            return Err(Error::Config(format!("temper lambda must be positive, got {lambda}")));
        }
        let mut t = Self::from_node(Node::Product(Vec::new()), &[&child])?;
        t.node = Node::Temper { child: Box::new(child), lambda };
        Ok(t)
    }

    /// `prior · p(y|x)^λ` with an explicit classifier model.
    pub fn guidance_explicit(prior: CompositionTree, classifier: CompositionTree, lambda: f64) -> Result<Self> {
        check_factor("guidance lambda", lambda)?;
        let mut t = Self::from_node(Node::Product(Vec::new()), &[&prior, &classifier])?;
        t.node = Node::Guidance { prior: Box::new(prior), term: LikelihoodTerm::Explicit(Box::new(classifier)), lambda };
        Ok(t)
    }

    /// `prior · (p(x|y)/p(x))^λ` from a conditional/unconditional pair.
    pub fn guidance_implicit(
        prior: CompositionTree,
        conditional: CompositionTree,
        unconditional: CompositionTree,
        lambda: f64,
    ) -> Result<Self> {
        check_factor("guidance lambda", lambda)?;
        let mut t = Self::from_node(Node::Product(Vec::new()), &[&prior, &conditional, &unconditional])?;
        t.node = Node::Guidance {
            prior: Box::new(prior),
            term: LikelihoodTerm::Implicit { conditional: Box::new(conditional), unconditional: Box::new(unconditional) },
            lambda,
        };
        Ok(t)
    }

    /// `p(x) · Π_i p(x|y_i)/p(x)`.
    pub fn conditional_product(unconditional: CompositionTree, conditionals: Vec<CompositionTree>) -> Result<Self> {
        if conditionals.is_empty() {
            return Err(Error::Config("conditional product needs at least one condition".into()));
        }
        let mut refs = vec![&unconditional];
        refs.extend(conditionals.iter());
        let mut t = Self::from_node(Node::Product(Vec::new()), &refs)?;
        t.node = Node::ConditionalProduct { unconditional: Box::new(unconditional), conditionals };
        Ok(t)
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    fn first_energyless_leaf(&self) -> Option<String> {
        if self.has_energy {
            return None;
        }
        let mut found = None;
        self.visit_leaves(&mut |name, m| {
            if found.is_none() && !m.has_energy() {
                found = Some(format!("{name} ({})", m.describe()));
            }
        });
        found
    }

    /// Calls `f` on every leaf, left to right.
    pub fn visit_leaves(&self, f: &mut dyn FnMut(&str, &Arc<dyn ScoreModel>)) {
        match &self.node {
            Node::Leaf { name, model } => f(name, model),
            Node::Product(cs) | Node::Mixture { children: cs, .. } => cs.iter().for_each(|c| c.visit_leaves(f)),
            Node::Negation { positive, negative, .. } => {
                positive.visit_leaves(f);
                negative.visit_leaves(f);
            }
            Node::Temper { child, .. } => child.visit_leaves(f),
            Node::Guidance { prior, term, .. } => {
                prior.visit_leaves(f);
                match term {
                    LikelihoodTerm::Explicit(c) => c.visit_leaves(f),
                    LikelihoodTerm::Implicit { conditional, unconditional } => {
                        conditional.visit_leaves(f);
                        unconditional.visit_leaves(f);
                    }
                }
            }
            Node::ConditionalProduct { unconditional, conditionals } => {
                unconditional.visit_leaves(f);
                conditionals.iter().for_each(|c| c.visit_leaves(f));
            }
        }
    }

    /// Whether every leaf is a closed-form model.
    pub fn is_analytic(&self) -> bool {
        let mut all = true;
        self.visit_leaves(&mut |_, m| all &= m.as_analytic().is_some());
        all
    }

    /// Rebuilds the tree with every leaf moved to `schedule`. Only closed-form
    /// leaves can be moved; neural leaves are tied to their training schedule.
    pub fn with_schedule(&self, schedule: &NoiseSchedule) -> Result<Self> {
        let re = |c: &CompositionTree| c.with_schedule(schedule);
        let re_all = |cs: &[CompositionTree]| cs.iter().map(re).collect::<Result<Vec<_>>>();
        match &self.node {
            Node::Leaf { name, model } => {
                if let Some(a) = model.as_analytic() {
                    Ok(Self::leaf(name.clone(), Arc::new(a.with_schedule(schedule.clone()))))
                } else if let Some(c) = model.as_classifier() {
                    Ok(Self::leaf(name.clone(), Arc::new(c.with_schedule(schedule.clone()))))
                } else {
                    Err(Error::Unsupported(format!("leaf `{name}` cannot change schedule without retraining")))
                }
            }
            Node::Product(cs) => Self::product(re_all(cs)?),
            Node::Mixture { children, weights } => Self::mixture(re_all(children)?, weights.clone()),
            Node::Negation { positive, negative, alpha } => Self::negation(re(positive)?, re(negative)?, *alpha),
            Node::Temper { child, lambda } => Self::temper(re(child)?, *lambda),
            Node::Guidance { prior, term, lambda } => match term {
                LikelihoodTerm::Explicit(c) => Self::guidance_explicit(re(prior)?, re(c)?, *lambda),
                LikelihoodTerm::Implicit { conditional, unconditional } => {
                    Self::guidance_implicit(re(prior)?, re(conditional)?, re(unconditional)?, *lambda)
                }
            },
            Node::ConditionalProduct { unconditional, conditionals } => {
                Self::conditional_product(re(unconditional)?, re_all(conditionals)?)
            }
        }
    }

    /// Composed energies (when `with_energy`) and scores at level `t`.
    pub fn evaluate(&self, xs: &[Vec2], t: usize, with_energy: bool) -> Result<(Option<Vec<f64>>, Vec<Vec2>)> {
        if with_energy && !self.has_energy {
            return Err(no_energy(&self.describe()));
        }
        match &self.node {
            Node::Leaf { model, .. } => {
                if with_energy {
                    let (e, s) = model.energy_and_score(xs, t)?;
                    Ok((Some(e), s))
                } else {
                    Ok((None, model.score(xs, t)?))
                }
            }
            Node::Product(cs) => {
                let mut acc = Accum::new(xs.len(), with_energy);
                for c in cs {
                    acc.add(c.evaluate(xs, t, with_energy)?, 1.0);
                }
                Ok(acc.finish())
            }
            Node::Mixture { children, weights } => {
                let parts: Vec<(Vec<f64>, Vec<Vec2>)> = children
                    .iter()
                    .map(|c| c.evaluate(xs, t, true).map(|(e, s)| (e.expect("energy requested"), s)))
                    .collect::<Result<_>>()?;
                let mut energy = Vec::with_capacity(xs.len());
                let mut score = Vec::with_capacity(xs.len());
                let mut logs = vec![0.0; children.len()];
                for i in 0..xs.len() {
                    for (k, (e, _)) in parts.iter().enumerate() {
                        logs[k] = weights[k].ln() + e[i];
                    }
                    let lse = log_sum_exp(&logs);
                    let mut s = [0.0; 2];
                    for (k, (_, sc)) in parts.iter().enumerate() {
                        let w = (logs[k] - lse).exp();
                        if w > 0.0 {
                            s[0] += w * sc[i][0];
                            s[1] += w * sc[i][1];
                        }
                    }
                    energy.push(lse);
                    score.push(s);
                }
                Ok((with_energy.then_some(energy), score))
            }
            Node::Negation { positive, negative, alpha } => {
                let mut acc = Accum::new(xs.len(), with_energy);
                acc.add(positive.evaluate(xs, t, with_energy)?, 1.0);
                acc.add(negative.evaluate(xs, t, with_energy)?, -alpha);
                Ok(acc.finish())
            }
            Node::Temper { child, lambda } => {
                let mut acc = Accum::new(xs.len(), with_energy);
                acc.add(child.evaluate(xs, t, with_energy)?, *lambda);
                Ok(acc.finish())
            }
            Node::Guidance { prior, term, lambda } => {
                let mut acc = Accum::new(xs.len(), with_energy);
                acc.add(prior.evaluate(xs, t, with_energy)?, 1.0);
                match term {
                    LikelihoodTerm::Explicit(c) => acc.add(c.evaluate(xs, t, with_energy)?, *lambda),
                    LikelihoodTerm::Implicit { conditional, unconditional } => {
                        acc.add(conditional.evaluate(xs, t, with_energy)?, *lambda);
                        acc.add(unconditional.evaluate(xs, t, with_energy)?, -lambda);
                    }
                }
                Ok(acc.finish())
            }
            Node::ConditionalProduct { unconditional, conditionals } => {
                let mut acc = Accum::new(xs.len(), with_energy);
                let k = conditionals.len() as f64;
                acc.add(unconditional.evaluate(xs, t, with_energy)?, 1.0 - k);
                for c in conditionals {
                    acc.add(c.evaluate(xs, t, with_energy)?, 1.0);
                }
                Ok(acc.finish())
            }
        }
    }

    /// Human-readable expression, also used as the tree's identity.
    pub fn describe(&self) -> String {
        let list = |cs: &[CompositionTree]| cs.iter().map(|c| c.describe()).collect::<Vec<_>>().join(", ");
        match &self.node {
            Node::Leaf { name, .. } => name.clone(),
            Node::Product(cs) => format!("product({})", list(cs)),
            Node::Mixture { children, weights } => format!("mixture({}; weights={weights:?})", list(children)),
            Node::Negation { positive, negative, alpha } => {
                format!("negation({}, {}; alpha={alpha})", positive.describe(), negative.describe())
            }
            Node::Temper { child, lambda } => format!("temper({}; lambda={lambda})", child.describe()),
            Node::Guidance { prior, term, lambda } => match term {
                LikelihoodTerm::Explicit(c) => format!("guidance({}, {}; lambda={lambda})", prior.describe(), c.describe()),
                LikelihoodTerm::Implicit { conditional, unconditional } => format!(
                    "guidance({}, {} - {}; lambda={lambda})",
                    prior.describe(),
                    conditional.describe(),
                    unconditional.describe()
                ),
            },
            Node::ConditionalProduct { unconditional, conditionals } => {
                format!("conditional_product({}; {})", unconditional.describe(), list(conditionals))
            }
        }
    }
}

/// Running weighted sum of child energies and scores.
struct Accum {
    energy: Option<Vec<f64>>,
    score: Vec<Vec2>,
}

impl Accum {
    fn new(n: usize, with_energy: bool) -> Self {
        Self { energy: with_energy.then(|| vec![0.0; n]), score: vec![[0.0; 2]; n] }
    }

    fn add(&mut self, (e, s): (Option<Vec<f64>>, Vec<Vec2>), k: f64) {
        if k == 0.0 {
            return;
        }
        for (acc, v) in self.score.iter_mut().zip(&s) {
            acc[0] += k * v[0];
            acc[1] += k * v[1];
        }
        if let (Some(acc), Some(e)) = (self.energy.as_mut(), e) {
            for (a, v) in acc.iter_mut().zip(e) {
                *a += k * v;
            }
        }
    }

    fn finish(self) -> (Option<Vec<f64>>, Vec<Vec2>) {
        (self.energy, self.score)
    }
}

impl ScoreModel for CompositionTree {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn has_energy(&self) -> bool {
        self.has_energy
    }

    fn min_level(&self) -> usize {
        self.min_level
    }

    fn score(&self, xs: &[Vec2], t: usize) -> Result<Vec<Vec2>> {
        Ok(self.evaluate(xs, t, false)?.1)
    }

    fn energy_and_score(&self, xs: &[Vec2], t: usize) -> Result<(Vec<f64>, Vec<Vec2>)> {
        let (e, s) = self.evaluate(xs, t, true)?;
        Ok((e.expect("energy requested"), s))
    }

    fn describe(&self) -> String {
        CompositionTree::describe(self)
    }
}

/// Serializable tree description; leaves refer to models by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TreeSpec {
    Leaf {
        model: String,
    },
    Product {
        children: Vec<TreeSpec>,
    },
    Mixture {
        children: Vec<TreeSpec>,
        /// Uniform when omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    Negation {
        positive: Box<TreeSpec>,
        negative: Box<TreeSpec>,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Temper {
        child: Box<TreeSpec>,
        lambda: f64,
    },
    Guidance {
        prior: Box<TreeSpec>,
        lambda: f64,
        term: TermSpec,
    },
    ConditionalProduct {
        unconditional: Box<TreeSpec>,
        conditionals: Vec<TreeSpec>,
    },
}

fn default_alpha() -> f64 {
    DEFAULT_NEGATION_ALPHA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermSpec {
    Explicit { classifier: Box<TreeSpec> },
    Implicit { conditional: Box<TreeSpec>, unconditional: Box<TreeSpec> },
}

impl TreeSpec {
    pub fn leaf(model: impl Into<String>) -> Self {
        TreeSpec::Leaf { model: model.into() }
    }

    /// Every leaf name, left to right.
    pub fn leaf_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<String>) {
        match self {
            TreeSpec::Leaf { model } => out.push(model.clone()),
            TreeSpec::Product { children } | TreeSpec::Mixture { children, .. } => {
                children.iter().for_each(|c| c.collect_leaves(out))
            }
            TreeSpec::Negation { positive, negative, .. } => {
                positive.collect_leaves(out);
                negative.collect_leaves(out);
            }
            TreeSpec::Temper { child, .. } => child.collect_leaves(out),
            TreeSpec::Guidance { prior, term, .. } => {
                prior.collect_leaves(out);
                match term {
                    TermSpec::Explicit { classifier } => classifier.collect_leaves(out),
                    TermSpec::Implicit { conditional, unconditional } => {
                        conditional.collect_leaves(out);
                        unconditional.collect_leaves(out);
                    }
                }
            }
            TreeSpec::ConditionalProduct { unconditional, conditionals } => {
                unconditional.collect_leaves(out);
                conditionals.iter().for_each(|c| c.collect_leaves(out));
            }
        }
    }

    /// Builds the tree, resolving leaf names through `resolve`.
    pub fn build(&self, resolve: &dyn Fn(&str) -> Result<Arc<dyn ScoreModel>>) -> Result<CompositionTree> {
        let b = |s: &TreeSpec| s.build(resolve);
        let all = |cs: &[TreeSpec]| cs.iter().map(|c| c.build(resolve)).collect::<Result<Vec<_>>>();
        match self {
            TreeSpec::Leaf { model } => Ok(CompositionTree::leaf(model.clone(), resolve(model)?)),
            TreeSpec::Product { children } => CompositionTree::product(all(children)?),
            TreeSpec::Mixture { children, weights: None } => CompositionTree::uniform_mixture(all(children)?),
            TreeSpec::Mixture { children, weights: Some(w) } => CompositionTree::mixture(all(children)?, w.clone()),
            TreeSpec::Negation { positive, negative, alpha } => CompositionTree::negation(b(positive)?, b(negative)?, *alpha),
            TreeSpec::Temper { child, lambda } => CompositionTree::temper(b(child)?, *lambda),
            TreeSpec::Guidance { prior, lambda, term } => match term {
                TermSpec::Explicit { classifier } => CompositionTree::guidance_explicit(b(prior)?, b(classifier)?, *lambda),
                TermSpec::Implicit { conditional, unconditional } => {
                    CompositionTree::guidance_implicit(b(prior)?, b(conditional)?, b(unconditional)?, *lambda)
                }
            },
            TreeSpec::ConditionalProduct { unconditional, conditionals } => {
                CompositionTree::conditional_product(b(unconditional)?, all(conditionals)?)
            }
        }
    }
}
