//! The toy 2D distributions used by the reproduction experiments.

use std::f64::consts::PI;

use crate::analytic::gmm::{Gmm, LabeledGmm};
use crate::analytic::uniform_box::UniformBox;
use crate::linalg::Sym2;

pub const RING_RADIUS: f64 = 0.5;
pub const RING_STD: f64 = 0.3;
pub const PAIR_STD: f64 = 0.03;

/// Eight Gaussians, std 0.3, evenly spaced on the circle of radius 0.5.
pub fn ring_gmm() -> Gmm {
    let means = (0..8)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 8.0;
            [RING_RADIUS * a.cos(), RING_RADIUS * a.sin()]
        })
        .collect();
    Gmm::isotropic(means, RING_STD).expect("valid preset")
}

/// The thin vertical strip `[−0.1, 0.1] × [−1, 1]`.
pub fn product_box() -> UniformBox {
    UniformBox::new([-0.1, -1.0], [0.1, 1.0]).expect("valid preset")
}

/// Two columns of three tight Gaussians, at `x = −0.25` and `x = 0.25`.
pub fn mixture_pair() -> (Gmm, Gmm) {
    let column = |x: f64| Gmm::isotropic(vec![[x, 0.5], [x, 0.0], [x, -0.5]], PAIR_STD).expect("valid preset");
    (column(-0.25), column(0.25))
}

/// Four Gaussians at the corners of a square; label 0 on the left, 1 on the right.
pub fn labeled_gmm() -> LabeledGmm {
    let g = Gmm::new(
        vec![0.3, 0.2, 0.2, 0.3],
        vec![[-0.5, 0.5], [-0.5, -0.5], [0.5, 0.5], [0.5, -0.5]],
        vec![Sym2::isotropic(0.04), Sym2::new(0.05, 0.01, 0.03), Sym2::isotropic(0.03), Sym2::isotropic(0.04)],
    )
    .expect("valid preset");
    LabeledGmm::new(g, vec![0, 0, 1, 1], 2).expect("valid preset")
}

/// An unequal two-component mixture for the tempering experiment.
pub fn tempering_gmm() -> Gmm {
    Gmm::new(
        vec![0.35, 0.65],
        vec![[-0.5, 0.1], [0.4, -0.2]],
        vec![Sym2::isotropic(0.04), Sym2::new(0.06, 0.015, 0.03)],
    )
    .expect("valid preset")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    #[test]
    fn ring_layout() {
        let g = ring_gmm();
        assert_eq!(g.len(), 8);
        for (w, m) in g.weights().iter().zip(g.means()) {
            assert_eq!(*w, 0.125);
            assert!((linalg::norm(*m) - 0.5).abs() < 1e-15);
        }
        assert!((g.covs()[0].xx - 0.09).abs() < 1e-15);
    }

    #[test]
    fn box_and_pair() {
        let b = product_box();
        assert_eq!(b.lo(), [-0.1, -1.0]);
        assert_eq!(b.hi(), [0.1, 1.0]);
        let (a, c) = mixture_pair();
        assert_eq!(a.means()[0], [-0.25, 0.5]);
        assert_eq!(c.means()[2], [0.25, -0.5]);
        assert!(a.covs().iter().chain(c.covs()).all(|s| (s.xx - 9e-4).abs() < 1e-18 && s.xy == 0.0));
    }
}
