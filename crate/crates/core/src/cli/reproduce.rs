//! Multi-seed comparisons of reverse diffusion against annealed MCMC.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::info;
use serde::{Deserialize, Serialize};

use crate::analytic::Gmm;
use crate::cli::commands::write;
use crate::cli::config::ExperimentConfig;
use crate::cli::plot::{render_svg, Panel};
use crate::compose::{CompositionTree, Node};
use crate::error::{Error, Result};
use crate::eval::verify::verify_mixture_identity;
use crate::eval::{evaluate, ground_truth_samples, ll_oracle, tree_as_gmm, MetricsMeta, Reference, Verdict};
use crate::linalg::{self, Vec2};
use crate::model::ScoreModel;
use crate::rng;
use crate::samplers::{annealed_mcmc, SamplerConfig, SamplerKind};
use crate::schedule::{NoiseSchedule, ScheduleSpec};

pub const REVERSE: &str = "reverse";
pub const EQUAL_STEPS: &str = "reverse_equal_steps";

/// Minimum share of HMC samples on each true mode of a mixture target.
pub const MODE_COVERAGE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub seed: u64,
    pub mmd: f64,
    pub ll: f64,
    pub ll_out_of_bounds: f64,
    pub var_l2: Option<f64>,
    pub score_evaluations: u64,
    pub mean_acceptance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mmd: f64,
    pub ll: f64,
    pub var_l2: Option<f64>,
    pub score_evaluations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub preset: String,
    pub tree: String,
    pub seeds: Vec<u64>,
    pub samples: usize,
    pub equal_steps: usize,
    /// Per-method medians over seeds.
    pub medians: BTreeMap<String, MethodSummary>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl Summary {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Method {
    Reverse,
    EqualSteps,
    Mcmc(SamplerKind),
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Reverse => REVERSE,
        Method::EqualSteps => EQUAL_STEPS,
        Method::Mcmc(SamplerKind::HmcPmr | SamplerKind::Hmc) => "hmc",
        Method::Mcmc(k) => k.label(),
    }
}

fn methods(preset: &str) -> Vec<Method> {
    use SamplerKind::*;
    match preset {
        "equal-steps-baseline" => vec![Method::Reverse, Method::EqualSteps, Method::Mcmc(HmcPmr)],
        _ => vec![
            Method::Reverse,
            Method::EqualSteps,
            Method::Mcmc(Ula),
            Method::Mcmc(Mala),
            Method::Mcmc(Uhmc),
            Method::Mcmc(HmcPmr),
        ],
    }
}

/// `(a, b, strict)`: median MMD of `a` below (or not above) that of `b`.
fn orderings(preset: &str) -> Vec<(&'static str, &'static str, bool)> {
    let hmc_vs_reverse = [("hmc", REVERSE, true), ("hmc", EQUAL_STEPS, true)];
    match preset {
        "product2d" | "mixture2d" => {
            let mut v = vec![
                ("hmc", "mala", true),
                ("mala", "uhmc", false),
                ("mala", "ula", false),
                ("uhmc", REVERSE, true),
                ("ula", REVERSE, true),
            ];
            v.extend(hmc_vs_reverse);
            v
        }
        "guidance2d" => vec![("hmc", REVERSE, true), ("mala", REVERSE, true)],
        _ => hmc_vs_reverse.to_vec(),
    }
}

/// The HMC configuration of a run: the config's sampler when it is an
/// adjusted Hamiltonian kernel, otherwise the fixed 2D settings.
fn hmc_config(cfg: &ExperimentConfig) -> SamplerConfig {
    match cfg.sampler.kind {
        SamplerKind::HmcPmr | SamplerKind::Hmc => cfg.sampler.clone(),
        _ => SamplerConfig::fixed_2d(SamplerKind::HmcPmr),
    }
}

fn sampler_for(cfg: &ExperimentConfig, kind: SamplerKind) -> SamplerConfig {
    let hmc = hmc_config(cfg);
    match kind {
        SamplerKind::Uhmc => SamplerConfig { kind, ..hmc },
        SamplerKind::HmcPmr | SamplerKind::Hmc => hmc,
        k => SamplerConfig::fixed_2d(k),
    }
}

/// The tree on a linear schedule with `steps` levels.
fn equal_steps_tree(cfg: &ExperimentConfig, steps: usize) -> Result<CompositionTree> {
    match cfg.schedule {
        ScheduleSpec::Linear { beta_min: None, beta_max: None, .. } => {
            cfg.tree()?.with_schedule(&NoiseSchedule::linear_default(steps)?)
        }
        _ => Err(Error::Unsupported("the equal-steps baseline needs a default linear schedule".into())),
    }
}

fn mode_counts(points: &[Vec2], centers: &[Vec2]) -> Vec<usize> {
    let mut counts = vec![0; centers.len()];
    for p in points {
        let nearest = (0..centers.len())
            .min_by(|&i, &j| {
                linalg::norm_sq(linalg::sub(*p, centers[i])).total_cmp(&linalg::norm_sq(linalg::sub(*p, centers[j])))
            })
            .expect("at least one center");
        counts[nearest] += 1;
    }
    counts
}

/// Leaf mixtures and weights of a mixture of closed-form leaves.
fn mixture_parts(tree: &CompositionTree) -> Option<(Vec<Gmm>, Vec<f64>)> {
    match tree.node() {
        Node::Mixture { children, weights } => {
            Some((children.iter().map(tree_as_gmm).collect::<Option<_>>()?, weights.clone()))
        }
        _ => None,
    }
}

fn leaf_samples(tree: &CompositionTree, n: usize, seed: u64) -> Vec<Vec2> {
    let mut leaves = Vec::new();
    tree.visit_leaves(&mut |_, m| {
        if let Some(a) = m.as_analytic() {
            leaves.push(a.clone());
        }
    });
    let mut r = rng::stream(seed, 1 << 41);
    let per = n / leaves.len().max(1);
    leaves.iter().flat_map(|a| (0..per).map(|_| a.sample(&mut r)).collect::<Vec<_>>()).collect()
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
    let mut s = String::from("method,seed,mmd,ll,ll_out_of_bounds,var_l2,score_evaluations,mean_acceptance\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{:.16e},{:.16e},{:.16e},{},{},{}",
            r.method,
            r.seed,
            r.mmd,
            r.ll,
            r.ll_out_of_bounds,
            opt(r.var_l2),
            r.score_evaluations,
            opt(r.mean_acceptance)
        )
        .expect("write to string");
    }
    s
}

/// Runs every method of `preset` on every seed of `cfg` and writes, under
/// `cfg.out`: `metrics.csv`, `summary.json`, `config.json`, `plot.svg` and
/// `samples/<method>_seed<k>.csv`. Failed checks are reported as an error
/// naming them, after all files are written.
pub fn cmd_reproduce(cfg: &ExperimentConfig, preset: &str) -> Result<Summary> {
    let tree = cfg.tree()?;
    let steps = tree.schedule().steps();
    let hmc = hmc_config(cfg);
    let equal = hmc.equal_steps(steps);
    let methods = methods(preset);
    let eq_tree = if methods.contains(&Method::EqualSteps) { Some(equal_steps_tree(cfg, equal)?) } else { None };
    let oracle = ll_oracle(&tree, cfg.metrics.grid)?;
    let n = cfg.samples;
    let mut rows = Vec::new();
    let mut coverage_ok = true;
    let mut coverage_detail = String::new();
    let centers = tree_as_gmm(&tree).filter(|_| preset == "mixture2d").map(|g| g.means().to_vec());
    let mut panels_seed0: Vec<(String, Vec<Vec2>)> = Vec::new();
    let write_samples = |name: &str, seed: u64, pts: &[Vec2]| -> Result<()> {
        let b = crate::samplers::SampleBatch::new(pts.to_vec(), tree.describe(), name, seed);
        write(&cfg.out.join("samples").join(format!("{name}_seed{seed}.csv")), b.to_csv())
    };
    for &seed in &cfg.seeds {
        let truth = ground_truth_samples(&tree, n, seed, cfg.metrics.grid)?;
        write_samples("ground_truth", seed, &truth.points)?;
        if seed == cfg.seed() {
            panels_seed0.push(("components".into(), leaf_samples(&tree, cfg.plot.max_points, seed)));
            panels_seed0.push(("ground truth".into(), truth.points.iter().take(cfg.plot.max_points).copied().collect()));
        }
        let reference = Reference::new(truth.points, &cfg.metrics)?;
        for &m in &methods {
            let name = method_name(m);
            let (batch, stats) = match m {
                Method::Reverse => annealed_mcmc(&tree, &SamplerConfig::reverse().with_seed(seed), n)?,
                Method::EqualSteps => annealed_mcmc(
                    eq_tree.as_ref().expect("built above"),
                    &SamplerConfig::reverse().with_seed(seed),
                    n,
                )?,
                Method::Mcmc(k) => annealed_mcmc(&tree, &sampler_for(cfg, k).with_seed(seed), n)?,
            };
            let meta = MetricsMeta {
                tree: tree.describe(),
                sampler: name.into(),
                seed,
                samples: n,
                score_evaluations: stats.score_evaluations,
            };
            let rep = evaluate(batch.points(), &reference, &tree, &oracle, &cfg.metrics, meta)?;
            info!("{preset} seed {seed} {name}: mmd {:.3e} ll {:.3}", rep.mmd, rep.ll);
            write_samples(name, seed, batch.points())?;
            if let (Some(c), Method::Mcmc(SamplerKind::HmcPmr | SamplerKind::Hmc)) = (&centers, m) {
                let counts = mode_counts(batch.points(), c);
                let min = counts.iter().copied().min().unwrap_or(0) as f64 / n.max(1) as f64;
                coverage_ok &= min >= MODE_COVERAGE;
                write!(coverage_detail, "seed {seed}: {counts:?}; ").expect("write to string");
            }
            if seed == cfg.seed() && (m == Method::Reverse || name == "hmc") {
                panels_seed0.push((name.into(), batch.points().iter().take(cfg.plot.max_points).copied().collect()));
            }
            rows.push(MetricsRow {
                method: name.into(),
                seed,
                mmd: rep.mmd,
                ll: rep.ll,
                ll_out_of_bounds: rep.ll_out_of_bounds,
                var_l2: rep.var_l2,
                score_evaluations: stats.score_evaluations,
                mean_acceptance: if stats.kind.is_adjusted() { stats.mean_acceptance() } else { None },
            });
        }
    }
    let mut medians = BTreeMap::new();
    for &m in &methods {
        let name = method_name(m);
        let mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.method == name).collect();
        let var = mine.iter().map(|r| r.var_l2).collect::<Option<Vec<f64>>>().map(median);
        medians.insert(
            name.to_string(),
            MethodSummary {
                mmd: median(mine.iter().map(|r| r.mmd).collect()),
                ll: median(mine.iter().map(|r| r.ll).collect()),
                var_l2: var,
                score_evaluations: mine.first().map(|r| r.score_evaluations).unwrap_or(0),
            },
        );
    }
    let mut checks = Vec::new();
    for (a, b, strict) in orderings(preset) {
        let (Some(x), Some(y)) = (medians.get(a), medians.get(b)) else { continue };
        let op = if strict { "<" } else { "<=" };
        let holds = if strict { x.mmd < y.mmd } else { x.mmd <= y.mmd };
        checks.push(Check {
            name: format!("mmd({a}) {op} mmd({b})"),
            holds,
            detail: format!("median MMD² {:.4e} vs {:.4e}", x.mmd, y.mmd),
        });
    }
    if centers.is_some() {
        checks.push(Check {
            name: format!("hmc mode coverage >= {MODE_COVERAGE}"),
            holds: coverage_ok,
            detail: coverage_detail.trim_end_matches("; ").to_string(),
        });
    }
    if preset == "mixture2d" {
        if let Some((parts, weights)) = mixture_parts(&tree) {
            let rec = verify_mixture_identity(&parts, &weights, tree.schedule(), 200, cfg.seed())?;
            let worst = rec.discrepancy.iter().copied().fold(0.0, f64::max);
            checks.push(Check {
                name: "mixture identity".into(),
                holds: rec.verdict == Verdict::EqualityHolds,
                detail: format!("{:?}, max relative L2 {worst:.2e}", rec.verdict),
            });
        }
    }
    let passed = checks.iter().all(|c| c.holds);
    let summary = Summary {
        preset: preset.into(),
        tree: tree.describe(),
        seeds: cfg.seeds.clone(),
        samples: n,
        equal_steps: equal,
        medians,
        checks,
        passed,
    };
    write(&cfg.out.join("metrics.csv"), metrics_csv(&rows))?;
    write(&cfg.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    write(&cfg.out.join("config.json"), cfg.to_json()?)?;
    let panels: Vec<Panel> = panels_seed0.iter().map(|(l, p)| Panel { label: l, points: p }).collect();
    write(&cfg.out.join("plot.svg"), render_svg(&panels, cfg.plot.bounds, cfg.plot.panel_size)?)?;
    if !summary.passed {
        let failed: Vec<&str> = summary.checks.iter().filter(|c| !c.holds).map(|c| c.name.as_str()).collect();
        return Err(Error::Metric(format!("{preset}: failed checks: {}", failed.join(", "))));
    }
    Ok(summary)
}
