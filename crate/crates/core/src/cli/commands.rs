//! The `train`, `sample`, `eval`, `verify` and `plot` commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::cli::config::{ExperimentConfig, ModelSpec};
use crate::cli::plot::{render_svg, Panel};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ground_truth_samples, ll_oracle, verification_suite, MetricsMeta, MetricsReport, Reference, VerificationReport};
use crate::model::ScoreModel;
use crate::nn::checkpoint::{load_matching, save_checkpoint};
use crate::nn::{train, NeuralModel, TrainConfig, TrainReport};
use crate::samplers::{annealed_mcmc, tune_step_sizes, ChainStats, SampleBatch, SamplerConfig, SamplerKind};

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

pub fn loss_csv(report: &TrainReport) -> String {
    let mut s = String::from("iteration,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        writeln!(s, "{i},{l:.16e}").expect("write to string");
    }
    s
}

pub struct TrainOutcome {
    pub model: String,
    pub checkpoint: PathBuf,
    pub report: TrainReport,
}

/// Trains every neural model of the config on samples of its distribution.
/// Writes each checkpoint and `<out>/<model>/loss.csv`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<TrainOutcome>> {
    let schedule = cfg.schedule()?;
    let mut out = Vec::new();
    for (name, spec) in &cfg.models {
        let ModelSpec::Neural { distribution, parameterization, checkpoint, architecture, train: tc, resume } = spec else {
            continue;
        };
        let data = cfg.distribution(distribution)?.analytic(distribution, &schedule)?;
        let mut model = if *resume && checkpoint.exists() {
            let m = load_matching(checkpoint, architecture, *parameterization)?;
            if m.schedule() != &schedule {
                return Err(Error::Config(format!("checkpoint {} uses a different schedule", checkpoint.display())));
            }
            m
        } else {
            NeuralModel::new(name, architecture.clone(), *parameterization, schedule.clone(), cfg.seed())?
        };
        let tc = TrainConfig { seed: cfg.seed(), ..tc.clone() };
        info!("training {name} ({parameterization:?}) for {} iterations", tc.iterations);
        let report = train(&mut model, |r| data.sample(r), &tc)?;
        if let Some(dir) = checkpoint.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        save_checkpoint(&model, checkpoint)?;
        write(&cfg.out.join(name).join("loss.csv"), loss_csv(&report))?;
        out.push(TrainOutcome { model: name.clone(), checkpoint: checkpoint.clone(), report });
    }
    if out.is_empty() {
        return Err(Error::Config("config has no neural model to train".into()));
    }
    Ok(out)
}

/// The adjusted kernel whose tuned step an unadjusted kernel reuses.
fn tuning_kind(kind: SamplerKind) -> SamplerKind {
    match kind {
        SamplerKind::Ula => SamplerKind::Mala,
        SamplerKind::Uhmc => SamplerKind::HmcPmr,
        k => k,
    }
}

/// Samples the configured tree. With a `tune` section the step constant is
/// first tuned on the adjusted counterpart of the configured kernel.
pub fn sample_tree(tree: &dyn ScoreModel, cfg: &ExperimentConfig, seed: u64) -> Result<(SampleBatch, ChainStats)> {
    let mut sampler = cfg.sampler.clone().with_seed(seed);
    let mut tuned = None;
    if let Some(opts) = &cfg.tune {
        let pilot = SamplerConfig { kind: tuning_kind(sampler.kind), ..sampler.clone() };
        let r = tune_step_sizes(tree, &pilot, opts)?;
        sampler.step_scale = r.step_scale;
        tuned = Some(r);
    }
    let (batch, mut stats) = annealed_mcmc(tree, &sampler, cfg.samples)?;
    if let Some(r) = tuned {
        stats.tuned_step_scale = Some(r.step_scale);
        stats.tuning_warning = r.warning;
    }
    Ok((batch, stats))
}

/// Writes `<out>/samples.csv` and `<out>/stats.json`.
pub fn cmd_sample(cfg: &ExperimentConfig) -> Result<(SampleBatch, ChainStats)> {
    let tree = cfg.tree()?;
    let (batch, stats) = sample_tree(&tree, cfg, cfg.seed())?;
    write(&cfg.out.join("samples.csv"), batch.to_csv())?;
    write(&cfg.out.join("stats.json"), stats.to_json()?)?;
    Ok((batch, stats))
}

/// Scores a sample file against ground truth; writes `<out>/metrics.json`.
/// An unreliable LL is reported after the file is written.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let path = cfg.samples_path.clone().unwrap_or_else(|| cfg.out.join("samples.csv"));
    let batch = SampleBatch::read_csv(&path)?;
    let tree = cfg.tree()?;
    let truth = ground_truth_samples(&tree, batch.len(), cfg.seed(), cfg.metrics.grid)?;
    let reference = Reference::new(truth.points, &cfg.metrics)?;
    let oracle = ll_oracle(&tree, cfg.metrics.grid)?;
    let meta = MetricsMeta {
        tree: tree.describe(),
        sampler: cfg.sampler.kind.label().into(),
        seed: cfg.seed(),
        samples: batch.len(),
        score_evaluations: (cfg.sampler.evaluations_per_chain(tree.schedule().steps()) * batch.len()) as u64,
    };
    let report = evaluate(batch.points(), &reference, &tree, &oracle, &cfg.metrics, meta)?;
    write(&cfg.out.join("metrics.json"), report.to_json()?)?;
    if report.ll_unreliable {
        return Err(Error::Metric(format!(
            "{:.1}% of samples fall outside the grid; LL is unreliable",
            100.0 * report.ll_out_of_bounds
        )));
    }
    Ok(report)
}

/// Runs the verification suite; writes `<out>/verification.json` and
/// `<out>/verification_probes.csv`. Any unexpected verdict is an error
/// after the files are written.
pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<VerificationReport> {
    let report = verification_suite(&cfg.schedule()?, &cfg.verify, cfg.seed())?;
    write(&cfg.out.join("verification.json"), report.to_json()?)?;
    write(&cfg.out.join("verification_probes.csv"), report.probes_csv())?;
    let failed: Vec<String> =
        report.claims.iter().filter(|c| !c.passed()).map(|c| format!("{} ({:?})", c.claim, c.verdict)).collect();
    if !failed.is_empty() {
        return Err(Error::Metric(format!("unexpected verdicts: {}", failed.join(", "))));
    }
    Ok(report)
}

/// One scatter panel per input CSV; writes `<out>/plot.svg`.
pub fn cmd_plot(cfg: &ExperimentConfig) -> Result<String> {
    if cfg.plot.inputs.is_empty() {
        return Err(Error::Config("plot.inputs lists no sample files".into()));
    }
    let batches: Vec<(String, SampleBatch)> = cfg
        .plot
        .inputs
        .iter()
        .map(|p| {
            let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            SampleBatch::read_csv(p).map(|b| (label, b))
        })
        .collect::<Result<_>>()?;
    let panels: Vec<Panel> = batches.iter().map(|(l, b)| Panel { label: l, points: b.points() }).collect();
    let svg = render_svg(&panels, cfg.plot.bounds, cfg.plot.panel_size)?;
    write(&cfg.out.join("plot.svg"), &svg)?;
    Ok(svg)
}
