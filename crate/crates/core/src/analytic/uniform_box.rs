use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::special::{log_ndtr_diff, log_phi, LN_2PI};
use crate::error::{Error, Result};
use crate::linalg::Vec2;

/// Uniform distribution on an axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRaw")]
pub struct UniformBox {
    lo: Vec2,
    hi: Vec2,
}

#[derive(Deserialize)]
struct BoxRaw {
    lo: Vec2,
    hi: Vec2,
}

impl TryFrom<BoxRaw> for UniformBox {
    type Error = Error;

    fn try_from(raw: BoxRaw) -> Result<Self> {
        UniformBox::new(raw.lo, raw.hi)
    }
}

impl UniformBox {
    pub fn new(lo: Vec2, hi: Vec2) -> Result<Self> {
        if !(lo[0] < hi[0] && lo[1] < hi[1]) || !lo.iter().chain(&hi).all(|v| v.is_finite()) {
            return Err(Error::Config(format!("box needs lo < hi componentwise, got {lo:?} and {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> Vec2 {
        self.lo
    }

    pub fn hi(&self) -> Vec2 {
        self.hi
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }

    pub fn contains(&self, x: Vec2) -> bool {
        (0..2).all(|d| x[d] >= self.lo[d] && x[d] <= self.hi[d])
    }

    /// Undiffused log-density: `−log(area)` inside, `−∞` outside.
    pub fn log_density0(&self, x: Vec2) -> f64 {
        if self.contains(x) {
            -self.area().ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Log-density and score of `scale·U + sigma·ε`.
    pub fn diffused(&self, x: Vec2, scale: f64, sigma: f64) -> (f64, Vec2) {
        let (l0, g0) = axis_uniform_conv(x[0], scale, self.lo[0], self.hi[0], sigma);
        let (l1, g1) = axis_uniform_conv(x[1], scale, self.lo[1], self.hi[1], sigma);
        (l0 + l1, [g0, g1])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec2 {
        [
            self.lo[0] + (self.hi[0] - self.lo[0]) * rng.random::<f64>(),
            self.lo[1] + (self.hi[1] - self.lo[1]) * rng.random::<f64>(),
        ]
    }

    pub fn variance(&self) -> Vec2 {
        let w0 = self.hi[0] - self.lo[0];
        let w1 = self.hi[1] - self.lo[1];
        [w0 * w0 / 12.0, w1 * w1 / 12.0]
    }
}

/// Log-density and its derivative at `y` of `scale·U[lo, hi] + sigma·ε`.
///
/// The density is `(Φ(A) − Φ(B)) / (scale·(hi − lo))` with
/// `A = (y − scale·lo)/σ` and `B = (y − scale·hi)/σ`.
pub fn axis_uniform_conv(y: f64, scale: f64, lo: f64, hi: f64, sigma: f64) -> (f64, f64) {
    let width = scale * (hi - lo);
    if width < 1e-9 * sigma {
        // the box has collapsed to a point; what is left is the Gaussian
        let z = (y - 0.5 * scale * (lo + hi)) / sigma;
        return (log_phi(z) - sigma.ln(), -z / sigma);
    }
    let a = (y - scale * lo) / sigma;
    let b = (y - scale * hi) / sigma;
    let log_d = log_ndtr_diff(a, b);
    let grad = ((log_phi(a) - log_d).exp() - (log_phi(b) - log_d).exp()) / sigma;
    (log_d - width.ln(), grad)
}

/// `log N(y; m, σ²)` in one dimension.
pub fn log_normal_1d(y: f64, m: f64, sigma: f64) -> f64 {
    let z = (y - m) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * LN_2PI
}
