//! Gaussian tail functions that stay finite far into the tails.

use statrs::function::erf::erfc;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log φ(z)` for the standard normal density.
#[inline]
pub fn log_phi(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * LN_2PI
}

/// `log Φ(z)`, accurate for arbitrarily negative `z`.
pub fn log_ndtr(z: f64) -> f64 {
    if z > 6.0 {
        // Φ(z) = 1 − Φ(−z), and Φ(−z) < 1e-9 here
        return (-0.5 * erfc(z / std::f64::consts::SQRT_2)).ln_1p();
    }
    if z > -20.0 {
        return (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln();
    }
    // Asymptotic Mills-ratio series: Φ(z) ≈ φ(z)/|z| · Σ (−1)^k (2k−1)!! / z^{2k}
    let z2 = z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..12 {
        term *= -((2 * k - 1) as f64) / z2;
        sum += term;
    }
    log_phi(z) - (-z).ln() + sum.ln()
}

/// `log(Φ(a) − Φ(b))` for `a > b`.
pub fn log_ndtr_diff(a: f64, b: f64) -> f64 {
    debug_assert!(a >= b);
    if a == b {
        return f64::NEG_INFINITY;
    }
    if b > 0.0 {
        // both in the upper tail: Φ(a) − Φ(b) = Φ(−b) − Φ(−a)
        let hi = log_ndtr(-b);
        let lo = log_ndtr(-a);
        hi + log1m_exp(lo - hi)
    } else {
        let hi = log_ndtr(a);
        let lo = log_ndtr(b);
        hi + log1m_exp(lo - hi)
    }
}

/// `log(1 − e^d)` for `d ≤ 0`.
#[inline]
fn log1m_exp(d: f64) -> f64 {
    if d > -std::f64::consts::LN_2 {
        (-d.exp_m1()).ln()
    } else {
        (-d.exp()).ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_evaluation_in_the_bulk() {
        for &z in &[-5.0, -1.0, 0.0, 0.7, 3.0] {
            let direct = (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln();
            assert!((log_ndtr(z) - direct).abs() < 1e-14);
        }
        assert!((log_ndtr(0.0) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn series_joins_erfc_branch() {
        let below = log_ndtr(-20.0 - 1e-9);
        let above = log_ndtr(-20.0 + 1e-9);
        assert!((below - above).abs() < 1e-7, "{below} vs {above}");
        assert!(log_ndtr(-1e4).is_finite());
        assert!(log_ndtr(-1e4) < -4.9e7);
    }

    #[test]
    fn difference_near_coincident_arguments() {
        // Φ(a) − Φ(b) ≈ φ(b)(a − b) for a close to b
        let b = 0.3;
        let a = b + 1e-8;
        let approx = log_phi(b) + (1e-8f64).ln();
        assert!((log_ndtr_diff(a, b) - approx).abs() < 1e-6);
        let far = log_ndtr_diff(-30.0, -31.0);
        assert!((far - log_ndtr(-30.0)).abs() < 1e-10);
    }
}
