//! Brute-force tabulation of a 2D density on a regular grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::uniform_box::axis_uniform_conv;
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Vec2};
use crate::rng;

/// Axis-aligned region and per-axis cell count of a grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec2,
    pub hi: Vec2,
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { lo: [-1.6, -1.6], hi: [1.6, 1.6], resolution: 512 }
    }
}

impl GridSpec {
    pub fn square(half_width: f64, resolution: usize) -> Self {
        Self { lo: [-half_width; 2], hi: [half_width; 2], resolution }
    }

    fn validate(&self) -> Result<()> {
        if self.resolution < 3 {
            return Err(Error::Config(format!("grid resolution {} is below 3", self.resolution)));
        }
        if !(self.lo[0] < self.hi[0] && self.lo[1] < self.hi[1]) {
            return Err(Error::Config(format!("grid bounds {:?}..{:?} are empty", self.lo, self.hi)));
        }
        Ok(())
    }
}

/// A normalized piecewise-constant density: each cell carries the density
/// value at its center.
#[derive(Clone, Debug)]
pub struct GridOracle {
    spec: GridSpec,
    h: Vec2,
    /// Unnormalized log-density at cell centers, index `i·n + j` for
    /// axis-0 cell `i` and axis-1 cell `j`.
    log_values: Vec<f64>,
    log_z: f64,
    mass: Vec<f64>,
    row_cdf: Vec<f64>,
    cond_cdf: Vec<f64>,
    active_rows: Vec<usize>,
    boundary_mass: f64,
}

impl GridOracle {
    /// Tabulates `log_density` (evaluated one grid row at a time).
    pub fn build<F>(spec: GridSpec, mut log_density: F) -> Result<Self>
    where
        F: FnMut(&[Vec2]) -> Result<Vec<f64>>,
    {
        spec.validate()?;
        let n = spec.resolution;
        let h = [(spec.hi[0] - spec.lo[0]) / n as f64, (spec.hi[1] - spec.lo[1]) / n as f64];
        let mut log_values = Vec::with_capacity(n * n);
        let mut row = Vec::with_capacity(n);
        for i in 0..n {
            let x0 = spec.lo[0] + (i as f64 + 0.5) * h[0];
            row.clear();
            row.extend((0..n).map(|j| [x0, spec.lo[1] + (j as f64 + 0.5) * h[1]]));
            let v = log_density(&row)?;
            if v.len() != n {
                return Err(Error::Argument(format!("density returned {} values for {n} points", v.len())));
            }
            log_values.extend(v);
        }
        if log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numeric("grid density produced NaN or +inf".into()));
        }
        let lse = log_sum_exp(&log_values);
        if !lse.is_finite() {
            return Err(Error::Numeric("grid density has no mass inside the bounds".into()));
        }
        let log_z = lse + (h[0] * h[1]).ln();
        let mass: Vec<f64> = log_values.iter().map(|v| (v - lse).exp()).collect();

        let mut row_cdf = Vec::with_capacity(n);
        let mut cond_cdf = vec![0.0; n * n];
        let mut acc = 0.0;
        let mut active_rows = Vec::new();
        for i in 0..n {
            let cells = &mass[i * n..(i + 1) * n];
            let row_mass: f64 = cells.iter().sum();
            acc += row_mass;
            row_cdf.push(acc);
            if row_mass > 0.0 {
                active_rows.push(i);
                let mut c = 0.0;
                for j in 0..n {
                    c += cells[j];
                    cond_cdf[i * n + j] = c / row_mass;
                }
            }
        }
        let total = acc;
        row_cdf.iter_mut().for_each(|c| *c /= total);

        let mut boundary_mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                    boundary_mass += mass[i * n + j];
                }
            }
        }
        Ok(Self { spec, h, log_values, log_z, mass, row_cdf, cond_cdf, active_rows, boundary_mass })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn cell_size(&self) -> Vec2 {
        self.h
    }

    /// Log of the midpoint-rule integral of the unnormalized input density.
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// Smallest finite normalized log-density in the table.
    pub fn log_density_floor(&self) -> f64 {
        self.log_values.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min) - self.log_z
    }

    /// Mass in the outermost ring of cells.
    pub fn boundary_mass(&self) -> f64 {
        self.boundary_mass
    }

    pub fn boundary_warning(&self) -> bool {
        self.boundary_mass > 1e-3
    }

    /// Normalized mass of every cell, in table order.
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        [self.spec.lo[0] + (i as f64 + 0.5) * self.h[0], self.spec.lo[1] + (j as f64 + 0.5) * self.h[1]]
    }

    pub fn contains(&self, x: Vec2) -> bool {
        (0..2).all(|d| x[d] >= self.spec.lo[d] && x[d] <= self.spec.hi[d])
    }

    /// Midpoint-rule total of the normalized table (1 up to rounding).
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Normalized log-density by bilinear interpolation of the table.
    pub fn log_density(&self, x: Vec2) -> f64 {
        let n = self.spec.resolution;
        let (i0, i1, fx) = self.bracket(x[0], 0);
        let (j0, j1, fy) = self.bracket(x[1], 1);
        let v = |i: usize, j: usize| self.log_values[i * n + j];
        let a = v(i0, j0) * (1.0 - fy) + v(i0, j1) * fy;
        let b = v(i1, j0) * (1.0 - fy) + v(i1, j1) * fy;
        let out = a * (1.0 - fx) + b * fx - self.log_z;
        if out.is_nan() {
            f64::NEG_INFINITY
        } else {
            out
        }
    }

    /// Central-difference score of the table, bilinearly interpolated.
    pub fn score(&self, x: Vec2) -> Vec2 {
        let (i0, i1, fx) = self.bracket(x[0], 0);
        let (j0, j1, fy) = self.bracket(x[1], 1);
        let mut out = [0.0; 2];
        for (i, wi) in [(i0, 1.0 - fx), (i1, fx)] {
            for (j, wj) in [(j0, 1.0 - fy), (j1, fy)] {
                let g = self.cell_score(i, j);
                out[0] += wi * wj * g[0];
                out[1] += wi * wj * g[1];
            }
        }
        out
    }

    fn cell_score(&self, i: usize, j: usize) -> Vec2 {
        let n = self.spec.resolution;
        let v = |i: usize, j: usize| self.log_values[i * n + j];
        let diff = |lo: f64, mid: f64, hi: f64, h: f64| {
            let c = (hi - lo) / (2.0 * h);
            if c.is_finite() {
                return c;
            }
            let f = (hi - mid) / h;
            if f.is_finite() {
                return f;
            }
            let b = (mid - lo) / h;
            if b.is_finite() {
                b
            } else {
                0.0
            }
        };
        let d0 = match i {
            0 => (v(1, j) - v(0, j)) / self.h[0],
            _ if i == n - 1 => (v(n - 1, j) - v(n - 2, j)) / self.h[0],
            _ => diff(v(i - 1, j), v(i, j), v(i + 1, j), self.h[0]),
        };
        let d1 = match j {
            0 => (v(i, 1) - v(i, 0)) / self.h[1],
            _ if j == n - 1 => (v(i, n - 1) - v(i, n - 2)) / self.h[1],
            _ => diff(v(i, j - 1), v(i, j), v(i, j + 1), self.h[1]),
        };
        [if d0.is_finite() { d0 } else { 0.0 }, if d1.is_finite() { d1 } else { 0.0 }]
    }

    /// Lower and upper cell-center indices around `x` on `axis`, and the
    /// interpolation fraction between them.
    fn bracket(&self, x: f64, axis: usize) -> (usize, usize, f64) {
        let n = self.spec.resolution;
        let u = ((x - self.spec.lo[axis]) / self.h[axis] - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = (u.floor() as usize).min(n - 2);
        (i0, i0 + 1, u - i0 as f64)
    }

    /// Inverse-CDF draw: axis-0 cell from the marginal, axis-1 cell from the
    /// conditional, then uniform jitter within the cell.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec2 {
        let n = self.spec.resolution;
        let u: f64 = rng.random();
        let mut i = self.row_cdf.partition_point(|c| *c <= u);
        if i == n {
            // u landed above the rounded total
            i = *self.active_rows.last().expect("grid has mass");
        }
        let cdf = &self.cond_cdf[i * n..(i + 1) * n];
        let v: f64 = rng.random();
        let j = cdf.partition_point(|c| *c <= v).min(n - 1);
        let c = self.cell_center(i, j);
        [
            c[0] + (rng.random::<f64>() - 0.5) * self.h[0],
            c[1] + (rng.random::<f64>() - 0.5) * self.h[1],
        ]
    }

    /// `n` draws on stream 0 of `seed`.
    pub fn sample_n(&self, n: usize, seed: u64) -> Vec<Vec2> {
        let mut r = rng::stream(seed, 0);
        (0..n).map(|_| self.sample(&mut r)).collect()
    }

    /// The table pushed through `x ↦ scale·x + sigma·ε`, each cell treated as
    /// uniform over its extent.
    pub fn diffused(&self, scale: f64, sigma: f64) -> Result<DiffusedGrid<'_>> {
        if !(sigma > 0.0) || !(scale > 0.0) {
            return Err(Error::Argument(format!("grid diffusion needs scale, sigma > 0 (got {scale}, {sigma})")));
        }
        Ok(DiffusedGrid { grid: self, scale, sigma })
    }
}

/// Exact density of the diffused piecewise-constant table.
#[derive(Clone, Copy, Debug)]
pub struct DiffusedGrid<'a> {
    grid: &'a GridOracle,
    scale: f64,
    sigma: f64,
}

impl DiffusedGrid<'_> {
    fn axis_kernel(&self, y: f64, axis: usize, kv: &mut Vec<f64>, kd: &mut Vec<f64>) -> f64 {
        let g = self.grid;
        let n = g.spec.resolution;
        kv.clear();
        kd.clear();
        let mut max = f64::NEG_INFINITY;
        for i in 0..n {
            let lo = g.spec.lo[axis] + i as f64 * g.h[axis];
            let (l, d) = axis_uniform_conv(y, self.scale, lo, lo + g.h[axis], self.sigma);
            max = max.max(l);
            kv.push(l);
            kd.push(d);
        }
        for i in 0..n {
            kv[i] = (kv[i] - max).exp();
            kd[i] *= kv[i];
        }
        max
    }

    /// Log-density and score at `y`.
    pub fn log_density_and_score(&self, y: Vec2) -> (f64, Vec2) {
        let g = self.grid;
        let n = g.spec.resolution;
        let mut kx = Vec::with_capacity(n);
        let mut dx = Vec::with_capacity(n);
        let mut ky = Vec::with_capacity(n);
        let mut dy = Vec::with_capacity(n);
        let mx = self.axis_kernel(y[0], 0, &mut kx, &mut dx);
        let my = self.axis_kernel(y[1], 1, &mut ky, &mut dy);
        let (mut p, mut p0, mut p1) = (0.0, 0.0, 0.0);
        for &i in &g.active_rows {
            if kx[i] == 0.0 && dx[i] == 0.0 {
                continue;
            }
            let row = &g.mass[i * n..(i + 1) * n];
            let mut w = 0.0;
            let mut wd = 0.0;
            for j in 0..n {
                w += row[j] * ky[j];
                wd += row[j] * dy[j];
            }
            p += kx[i] * w;
            p0 += dx[i] * w;
            p1 += kx[i] * wd;
        }
        (p.ln() + mx + my, [p0 / p, p1 / p])
    }

    pub fn log_density(&self, y: Vec2) -> f64 {
        self.log_density_and_score(y).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::gmm::Gmm;
    use crate::analytic::presets;
    use crate::analytic::special::LN_2PI;
    use crate::analytic::uniform_box::UniformBox;

    fn gmm_grid(g: &Gmm, spec: GridSpec) -> GridOracle {
        let e = g.evaluator();
        GridOracle::build(spec, |xs| Ok(xs.iter().map(|x| e.log_density(*x)).collect())).unwrap()
    }

    #[test]
    fn standard_normal_normalizer_and_mean() {
        let g = Gmm::isotropic(vec![[0.0, 0.0]], 1.0).unwrap();
        let o = gmm_grid(&g, GridSpec::square(6.0, 512));
        assert!(o.log_z().abs() < 1e-4, "{}", o.log_z());
        assert!((o.total_mass() - 1.0).abs() < 1e-12);
        assert!(!o.boundary_warning());
        let xs = o.sample_n(100_000, 11);
        for d in 0..2 {
            let m: f64 = xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64;
            assert!(m.abs() < 0.01, "{m}");
        }
        // unnormalized input shifts log_z by the same constant
        let o2 = GridOracle::build(GridSpec::square(6.0, 128), |xs| {
            Ok(xs.iter().map(|x| -0.5 * (x[0] * x[0] + x[1] * x[1])).collect())
        })
        .unwrap();
        assert!((o2.log_z() - LN_2PI).abs() < 1e-4);
    }

    #[test]
    fn uniform_box_target_passes_chi_square() {
        let b = UniformBox::new([-0.5, -0.5], [0.5, 0.5]).unwrap();
        let o = GridOracle::build(GridSpec::square(1.0, 200), |xs| Ok(xs.iter().map(|x| b.log_density0(*x)).collect())).unwrap();
        let xs = o.sample_n(100_000, 4);
        let mut counts = [0usize; 100];
        for x in &xs {
            assert!(b.contains(*x));
            let i = (((x[0] + 0.5) * 10.0) as usize).min(9);
            let j = (((x[1] + 0.5) * 10.0) as usize).min(9);
            counts[i * 10 + j] += 1;
        }
        let expect = xs.len() as f64 / 100.0;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - expect).powi(2) / expect).sum();
        // 99th percentile of chi-square with 99 degrees of freedom
        assert!(chi2 < 134.6, "{chi2}");
    }

    #[test]
    fn grid_score_matches_analytic_score() {
        let g = presets::ring_gmm();
        let o = gmm_grid(&g, GridSpec::default());
        let mut r = rng::stream(8, 0);
        for _ in 0..200 {
            let x = [r.random::<f64>() * 2.4 - 1.2, r.random::<f64>() * 2.4 - 1.2];
            let s = g.score(x);
            let gs = o.score(x);
            assert!((s[0] - gs[0]).abs() < 2e-3 && (s[1] - gs[1]).abs() < 2e-3, "{s:?} vs {gs:?}");
            assert!((o.log_density(x) - g.log_density(x)).abs() < 1e-3);
        }
    }

    #[test]
    fn diffused_grid_matches_diffused_gmm() {
        let g = presets::ring_gmm();
        let o = gmm_grid(&g, GridSpec::square(2.2, 256));
        for &ab in &[0.99f64, 0.5, 0.05] {
            let d = o.diffused(ab.sqrt(), (1.0 - ab).sqrt()).unwrap();
            let e = g.diffuse_with(ab).evaluator();
            for x in [[0.0, 0.0], [0.4, -0.3], [-0.9, 0.2]] {
                let (l, s) = d.log_density_and_score(x);
                let (le, se) = e.log_density_and_score(x);
                assert!((l - le).abs() < 5e-4, "{l} vs {le}");
                for k in 0..2 {
                    assert!((s[k] - se[k]).abs() < 1e-3 * (1.0 + se[k].abs()), "{s:?} vs {se:?}");
                }
            }
        }
    }

    #[test]
    fn diffused_box_grid_matches_closed_form() {
        let b = presets::product_box();
        let o = GridOracle::build(GridSpec::default(), |xs| Ok(xs.iter().map(|x| b.log_density0(*x)).collect())).unwrap();
        for &(scale, sigma) in &[(0.999f64, 0.0447f64), (0.6, 0.8)] {
            let d = o.diffused(scale, sigma).unwrap();
            for x in [[0.0, 0.0], [0.05, 0.9], [-0.2, -0.5], [0.3, 1.1]] {
                let (l, _) = d.log_density_and_score(x);
                let (le, _) = b.diffused(x, scale, sigma);
                assert!(((l - le).exp() - 1.0).abs() < 1e-3, "{x:?}: {l} vs {le}");
            }
        }
    }

    #[test]
    fn boundary_mass_flags_truncation() {
        let g = Gmm::isotropic(vec![[0.0, 0.0]], 1.0).unwrap();
        let o = gmm_grid(&g, GridSpec::square(1.0, 64));
        assert!(o.boundary_warning());
    }
}
