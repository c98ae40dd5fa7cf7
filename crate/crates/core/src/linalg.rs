//! Fixed-size 2D vector and symmetric 2×2 matrix helpers.

use serde::{Deserialize, Serialize};

pub type Vec2 = [f64; 2];

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(a: Vec2, k: f64) -> Vec2 {
    [a[0] * k, a[1] * k]
}

/// `a + k * b`
#[inline]
pub fn axpy(a: Vec2, k: f64, b: Vec2) -> Vec2 {
    [a[0] + k * b[0], a[1] + k * b[1]]
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm_sq(a: Vec2) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    norm_sq(a).sqrt()
}

#[inline]
pub fn is_finite(a: Vec2) -> bool {
    a[0].is_finite() && a[1].is_finite()
}

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub const fn isotropic(v: f64) -> Self {
        Self { xx: v, xy: 0.0, yy: v }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_tr = 0.5 * self.trace();
        let disc = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (half_tr - disc, half_tr + disc)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite() && self.eigenvalues().0 > 0.0
    }

    pub fn inverse(&self) -> Sym2 {
        let d = self.det();
        Sym2::new(self.yy / d, -self.xy / d, self.xx / d)
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    pub fn quad_form(&self, v: Vec2) -> f64 {
        dot(v, self.mul_vec(v))
    }

    pub fn scaled(&self, k: f64) -> Sym2 {
        Sym2::new(self.xx * k, self.xy * k, self.yy * k)
    }

    pub fn add_diag(&self, s: f64) -> Sym2 {
        Sym2::new(self.xx + s, self.xy, self.yy + s)
    }

    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }

    /// Lower Cholesky factor `(l11, l21, l22)` with `L Lᵀ = self`.
    pub fn cholesky(&self) -> (f64, f64, f64) {
        let l11 = self.xx.sqrt();
        let l21 = self.xy / l11;
        let l22 = (self.yy - l21 * l21).sqrt();
        (l11, l21, l22)
    }
}

/// Numerically stable `log(Σ exp(v))`; `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
