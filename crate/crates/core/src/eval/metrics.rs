use serde::{Deserialize, Serialize};

use crate::analytic::{GridOracle, GridSpec};
use crate::error::Result;
use crate::eval::em::{fit_gmm, sorted_variances, EmConfig};
use crate::eval::mmd::mmd2;
use crate::eval::oracle::composed_grid;
use crate::linalg::{Sym2, Vec2};
use crate::model::ScoreModel;

/// Out-of-bounds fraction above which LL is flagged.
pub const LL_OUT_OF_BOUNDS_LIMIT: f64 = 0.05;

/// The level whose composed density scores samples: the smooth `t = 1`
/// marginal, where every composed energy is finite.
pub const LL_LEVEL: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    pub ll: f64,
    pub out_of_bounds: f64,
    pub unreliable: bool,
}

/// Grid normalizer for LL at [`LL_LEVEL`].
pub fn ll_oracle(tree: &dyn ScoreModel, spec: GridSpec) -> Result<GridOracle> {
    composed_grid(tree, LL_LEVEL, spec)
}

/// Mean normalized log-density of `x` under the composed target. Samples
/// outside the grid score the grid's lowest log-density.
pub fn ll_under_target(x: &[Vec2], tree: &dyn ScoreModel, oracle: &GridOracle) -> Result<LogLikelihood> {
    let energy = tree.energy(x, LL_LEVEL)?;
    let floor = oracle.log_density_floor();
    let mut outside = 0usize;
    let mut total = 0.0;
    for (p, e) in x.iter().zip(&energy) {
        if oracle.contains(*p) {
            total += (e - oracle.log_z()).max(floor);
        } else {
            outside += 1;
            total += floor;
        }
    }
    let n = x.len().max(1) as f64;
    let out_of_bounds = outside as f64 / n;
    Ok(LogLikelihood { ll: total / n, out_of_bounds, unreliable: out_of_bounds > LL_OUT_OF_BOUNDS_LIMIT })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec2,
    pub cov: Sym2,
}

pub fn moments(x: &[Vec2]) -> Moments {
    let n = x.len().max(1) as f64;
    let mean = [x.iter().map(|p| p[0]).sum::<f64>() / n, x.iter().map(|p| p[1]).sum::<f64>() / n];
    let c = |a: usize, b: usize| x.iter().map(|p| (p[a] - mean[a]) * (p[b] - mean[b])).sum::<f64>() / n;
    Moments { mean, cov: Sym2::new(c(0, 0), c(0, 1), c(1, 1)) }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsMeta {
    pub tree: String,
    pub sampler: String,
    pub seed: u64,
    pub samples: usize,
    pub score_evaluations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mmd: f64,
    pub ll: f64,
    pub ll_out_of_bounds: f64,
    pub ll_unreliable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_l2: Option<f64>,
    pub moments: Moments,
    pub meta: MetricsMeta,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Which metrics to compute and how.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Component count for the variance metric; skipped when absent.
    pub components: Option<usize>,
    pub em: EmConfig,
    pub grid: GridSpec,
}

/// Ground-truth samples with their fitted component variances, reused across
/// every evaluation against the same truth.
#[derive(Clone, Debug)]
pub struct Reference {
    pub points: Vec<Vec2>,
    pub variances: Option<Vec<f64>>,
}

impl Reference {
    pub fn new(points: Vec<Vec2>, cfg: &MetricConfig) -> Result<Self> {
        let variances = cfg.components.map(|k| fit_gmm(&points, k, &cfg.em).map(|f| sorted_variances(&f.gmm))).transpose()?;
        Ok(Self { points, variances })
    }
}

/// MMD, LL and (optionally) Var of `x` against a reference.
pub fn evaluate(
    x: &[Vec2],
    reference: &Reference,
    tree: &dyn ScoreModel,
    oracle: &GridOracle,
    cfg: &MetricConfig,
    meta: MetricsMeta,
) -> Result<MetricsReport> {
    let mmd = mmd2(x, &reference.points)?;
    let ll = ll_under_target(x, tree, oracle)?;
    let var_l2 = match &reference.variances {
        Some(v) => {
            let got = sorted_variances(&fit_gmm(x, v.len() / 2, &cfg.em)?.gmm);
            Some(got.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        }
        None => None,
    };
    Ok(MetricsReport {
        mmd,
        ll: ll.ll,
        ll_out_of_bounds: ll.out_of_bounds,
        ll_unreliable: ll.unreliable,
        var_l2,
        moments: moments(x),
        meta,
    })
}
