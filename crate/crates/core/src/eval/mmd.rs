use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, Vec2};

/// Points used for the median-distance bandwidth.
pub const BANDWIDTH_SUBSAMPLE: usize = 1000;

/// Median pairwise distance over an evenly spaced subsample of the pooled
/// points.
pub fn median_bandwidth(x: &[Vec2], y: &[Vec2]) -> f64 {
    let pooled: Vec<Vec2> = x.iter().chain(y).copied().collect();
    let stride = pooled.len().div_ceil(BANDWIDTH_SUBSAMPLE).max(1);
    let sub: Vec<Vec2> = pooled.iter().step_by(stride).copied().collect();
    let mut d: Vec<f64> = Vec::with_capacity(sub.len() * sub.len() / 2);
    for i in 0..sub.len() {
        for j in i + 1..sub.len() {
            d.push(linalg::norm(linalg::sub(sub[i], sub[j])));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

/// `Σ_i Σ_j k(a_i, b_j)`, skipping `i == j` when `same`. Row sums are
/// reduced in a fixed order so the result does not depend on threading.
fn kernel_sum(a: &[Vec2], b: &[Vec2], gamma: f64, same: bool) -> f64 {
    let rows: Vec<f64> = a
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let start = if same { i + 1 } else { 0 };
            b[start..].iter().map(|q| (-gamma * linalg::norm_sq(linalg::sub(*p, *q))).exp()).sum::<f64>()
        })
        .collect();
    let s: f64 = rows.iter().sum();
    if same {
        2.0 * s
    } else {
        s
    }
}

/// Unbiased squared MMD with a Gaussian kernel of bandwidth `h`.
pub fn mmd2_with_bandwidth(x: &[Vec2], y: &[Vec2], h: f64) -> Result<f64> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::Argument(format!("mmd needs at least 2 points per batch (got {} and {})", x.len(), y.len())));
    }
    let gamma = 1.0 / (2.0 * h * h);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let kxx = kernel_sum(x, x, gamma, true) / (n * (n - 1.0));
    let kyy = kernel_sum(y, y, gamma, true) / (m * (m - 1.0));
    let kxy = kernel_sum(x, y, gamma, false) / (n * m);
    Ok(kxx + kyy - 2.0 * kxy)
}

/// Unbiased squared MMD, bandwidth from [`median_bandwidth`].
pub fn mmd2(x: &[Vec2], y: &[Vec2]) -> Result<f64> {
    mmd2_with_bandwidth(x, y, median_bandwidth(x, y))
}
