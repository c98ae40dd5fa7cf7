//! Reference samples and normalized densities for composed targets.

use serde::{Deserialize, Serialize};

use crate::analytic::{Gmm, GridOracle, GridSpec};
use crate::compose::{CompositionTree, Node};
use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::model::ScoreModel;
use crate::rng;

/// Stream offset for reference sampling, away from chain streams.
const TRUTH_STREAM: u64 = 1 << 40;

/// The composed density as a closed-form mixture, where one exists: leaves
/// that are mixtures, their mixtures and products, and integer tempering.
pub fn tree_as_gmm(tree: &CompositionTree) -> Option<Gmm> {
    match tree.node() {
        Node::Leaf { model, .. } => model.as_analytic().and_then(|a| a.base_gmm().cloned()),
        Node::Product(cs) => {
            let mut it = cs.iter();
            let mut acc = tree_as_gmm(it.next()?)?;
            for c in it {
                acc = acc.product(&tree_as_gmm(c)?).ok()?;
            }
            Some(acc)
        }
        Node::Mixture { children, weights } => {
            let parts: Vec<Gmm> = children.iter().map(tree_as_gmm).collect::<Option<_>>()?;
            let pairs: Vec<(&Gmm, f64)> = parts.iter().zip(weights.iter().copied()).collect();
            Gmm::pool(&pairs).ok()
        }
        Node::Temper { child, lambda } if *lambda >= 1.0 && lambda.fract() == 0.0 && *lambda <= 4.0 => {
            tree_as_gmm(child)?.power(*lambda as u32).ok()
        }
        _ => None,
    }
}

/// The lowest level at which the tree's data distribution can be read off:
/// 0 for closed-form trees, 1 otherwise.
pub fn data_level(tree: &dyn ScoreModel) -> usize {
    tree.min_level()
}

/// Grid tabulation of the composed energy at level `t`.
pub fn composed_grid(tree: &dyn ScoreModel, t: usize, spec: GridSpec) -> Result<GridOracle> {
    if !tree.has_energy() {
        return Err(Error::Capability(format!("{} has no energy to tabulate", tree.describe())));
    }
    GridOracle::build(spec, |row| tree.energy(row, t))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthMethod {
    Leaf,
    ClosedForm,
    Grid,
}

#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub points: Vec<Vec2>,
    pub method: TruthMethod,
    pub level: usize,
    /// Set when the grid carries noticeable mass on its boundary.
    pub diagnostic: Option<String>,
}

/// Exact samples of the composed data distribution where a closed form
/// exists, otherwise inverse-CDF samples from a grid tabulation.
pub fn ground_truth_samples(tree: &CompositionTree, n: usize, seed: u64, spec: GridSpec) -> Result<GroundTruth> {
    let mut r = rng::stream(seed, TRUTH_STREAM);
    if let Node::Leaf { model, .. } = tree.node() {
        if let Some(a) = model.as_analytic() {
            let points = (0..n).map(|_| a.sample(&mut r)).collect();
            return Ok(GroundTruth { points, method: TruthMethod::Leaf, level: 0, diagnostic: None });
        }
    }
    if tree.is_analytic() {
        if let Some(g) = tree_as_gmm(tree) {
            let points = (0..n).map(|_| g.sample(&mut r)).collect();
            return Ok(GroundTruth { points, method: TruthMethod::ClosedForm, level: 0, diagnostic: None });
        }
    }
    let level = data_level(tree);
    let grid = composed_grid(tree, level, spec)?;
    let diagnostic = grid
        .boundary_warning()
        .then(|| format!("grid boundary carries mass {:.2e}", grid.boundary_mass()));
    let points = (0..n).map(|_| grid.sample(&mut r)).collect();
    Ok(GroundTruth { points, method: TruthMethod::Grid, level, diagnostic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{presets, AnalyticModel};
    use crate::schedule::NoiseSchedule;
    use std::sync::Arc;

    fn leaf_gmm(name: &str, g: Gmm) -> CompositionTree {
        CompositionTree::leaf(name, Arc::new(AnalyticModel::gmm(name, g, NoiseSchedule::linear_default(100).unwrap())))
    }

    fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn mixture_truth_is_closed_form_and_agrees_with_the_grid() {
        let (a, b) = presets::mixture_pair();
        let tree = CompositionTree::uniform_mixture(vec![leaf_gmm("a", a), leaf_gmm("b", b)]).unwrap();
        let exact = ground_truth_samples(&tree, 5000, 1, GridSpec::default()).unwrap();
        assert_eq!(exact.method, TruthMethod::ClosedForm);
        let grid = composed_grid(&tree, 0, GridSpec::default()).unwrap();
        let g = grid.sample_n(5000, 2);
        for d in 0..2 {
            let mut x: Vec<f64> = exact.points.iter().map(|p| p[d]).collect();
            let mut y: Vec<f64> = g.iter().map(|p| p[d]).collect();
            // 1% critical value for two samples of 5000
            let crit = 1.628 * (2.0 / 5000.0f64).sqrt();
            assert!(ks_two_sample(&mut x, &mut y) < crit);
        }
    }

    #[test]
    fn product_with_box_uses_the_grid_inside_support() {
        let s = NoiseSchedule::linear_default(100).unwrap();
        let tree = CompositionTree::product(vec![
            leaf_gmm("ring", presets::ring_gmm()),
            CompositionTree::leaf("box", Arc::new(AnalyticModel::uniform_box("box", presets::product_box(), s))),
        ])
        .unwrap();
        let t = ground_truth_samples(&tree, 4000, 3, GridSpec::default()).unwrap();
        assert_eq!(t.method, TruthMethod::Grid);
        assert!(t.diagnostic.is_none());
        let inside = t.points.iter().filter(|p| presets::product_box().contains(**p)).count();
        assert_eq!(inside, 4000);
    }

    #[test]
    fn single_leaf_and_products_of_mixtures() {
        let leaf = leaf_gmm("ring", presets::ring_gmm());
        assert_eq!(ground_truth_samples(&leaf, 10, 0, GridSpec::default()).unwrap().method, TruthMethod::Leaf);
        let p = CompositionTree::product(vec![leaf.clone(), leaf_gmm("t", presets::tempering_gmm())]).unwrap();
        assert_eq!(tree_as_gmm(&p).unwrap().len(), 16);
        let sq = CompositionTree::temper(leaf, 2.0).unwrap();
        assert_eq!(tree_as_gmm(&sq).unwrap().len(), 64);
    }
}
