//! Experiment configuration files and the built-in presets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analytic::{presets, AnalyticModel, ClassifierModel, Gmm, LabeledGmm, UniformBox};
use crate::compose::{CompositionTree, TermSpec, TreeSpec};
use crate::error::{Error, Result};
use crate::eval::{MetricConfig, SuiteConfig};
use crate::model::ScoreModel;
use crate::nn::checkpoint::load_matching;
use crate::nn::{MlpArchitecture, Parameterization, TrainConfig};
use crate::samplers::{SamplerConfig, SamplerKind, TuneOptions};
use crate::schedule::{NoiseSchedule, ScheduleSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// A named data distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    Gmm(Gmm),
    Box(UniformBox),
    Labeled(LabeledGmm),
    /// One of `ring`, `box`, `column_left`, `column_right`, `labeled`, `tempering`.
    Preset { name: String },
}

impl DistributionSpec {
    pub fn preset(name: &str) -> Self {
        DistributionSpec::Preset { name: name.into() }
    }

    /// The concrete distribution, presets expanded.
    pub fn resolve(&self) -> Result<DistributionSpec> {
        Ok(match self {
            DistributionSpec::Preset { name } => match name.as_str() {
                "ring" => DistributionSpec::Gmm(presets::ring_gmm()),
                "box" => DistributionSpec::Box(presets::product_box()),
                "column_left" => DistributionSpec::Gmm(presets::mixture_pair().0),
                "column_right" => DistributionSpec::Gmm(presets::mixture_pair().1),
                "labeled" => DistributionSpec::Labeled(presets::labeled_gmm()),
                "tempering" => DistributionSpec::Gmm(presets::tempering_gmm()),
                other => return Err(Error::Config(format!("unknown distribution preset `{other}`"))),
            },
            d => d.clone(),
        })
    }

    /// Exact sampler over the data distribution.
    pub fn analytic(&self, name: &str, schedule: &NoiseSchedule) -> Result<AnalyticModel> {
        Ok(match self.resolve()? {
            DistributionSpec::Gmm(g) => AnalyticModel::gmm(name, g, schedule.clone()),
            DistributionSpec::Box(b) => AnalyticModel::uniform_box(name, b, schedule.clone()),
            DistributionSpec::Labeled(g) => AnalyticModel::labeled(name, g, None, schedule.clone())?,
            DistributionSpec::Preset { .. } => unreachable!("resolved above"),
        })
    }
}

/// How a tree leaf is realized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Exact diffused marginals of a distribution; `label` selects a class
    /// conditional of a labeled mixture.
    Analytic {
        distribution: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<usize>,
    },
    /// `p_t(y | x)` of a labeled mixture.
    Classifier { distribution: String, label: usize },
    /// A trained network stored at `checkpoint`, trained on `distribution`.
    Neural {
        distribution: String,
        parameterization: Parameterization,
        checkpoint: PathBuf,
        #[serde(default)]
        architecture: MlpArchitecture,
        #[serde(default)]
        train: TrainConfig,
        /// Continue from an existing checkpoint when training.
        #[serde(default)]
        resume: bool,
    },
}

impl ModelSpec {
    pub fn distribution(&self) -> &str {
        match self {
            ModelSpec::Analytic { distribution, .. }
            | ModelSpec::Classifier { distribution, .. }
            | ModelSpec::Neural { distribution, .. } => distribution,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotConfig {
    /// `[x_min, x_max, y_min, y_max]`.
    pub bounds: [f64; 4],
    /// Side length of one panel in pixels.
    pub panel_size: f64,
    /// Samples drawn per panel in reproduction plots.
    pub max_points: usize,
    /// Sample CSVs plotted by the `plot` command, one panel each.
    pub inputs: Vec<PathBuf>,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self { bounds: [-1.5, 1.5, -1.5, 1.5], panel_size: 320.0, max_points: 2000, inputs: Vec::new() }
    }
}

/// Everything a command needs. Unset sections take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub schedule: ScheduleSpec,
    pub distributions: BTreeMap<String, DistributionSpec>,
    pub models: BTreeMap<String, ModelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeSpec>,
    pub sampler: SamplerConfig,
    /// Tune the sampler's step constant before sampling.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tune: Option<TuneOptions>,
    pub samples: usize,
    pub metrics: MetricConfig,
    pub verify: SuiteConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Sample file read by `eval`; defaults to the `sample` output.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_path: Option<PathBuf>,
    pub plot: PlotConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            schedule: ScheduleSpec::Linear { steps: 100, beta_min: None, beta_max: None },
            distributions: BTreeMap::new(),
            models: BTreeMap::new(),
            tree: None,
            sampler: SamplerConfig::default(),
            tune: None,
            samples: 10_000,
            metrics: MetricConfig::default(),
            verify: SuiteConfig::default(),
            seeds: (0..5).collect(),
            out: PathBuf::from("out"),
            samples_path: None,
            plot: PlotConfig::default(),
        }
    }
}

pub const PRESETS: [&str; 6] = ["product2d", "mixture2d", "equal-steps-baseline", "guidance2d", "ring-epsilon", "ring-energy-l2"];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Schema version and name references.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for (name, m) in &self.models {
            if !self.distributions.contains_key(m.distribution()) {
                return Err(Error::Config(format!(
                    "model `{name}` refers to unknown distribution `{}`",
                    m.distribution()
                )));
            }
        }
        if let Some(tree) = &self.tree {
            for leaf in tree.leaf_names() {
                if !self.models.contains_key(&leaf) {
                    return Err(Error::Config(format!("tree refers to unknown model `{leaf}`")));
                }
            }
        }
        for d in self.distributions.values() {
            d.resolve()?;
        }
        self.sampler.validate()
    }

    /// First configured seed.
    pub fn seed(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    /// Shifts the seed list to start at `seed`, keeping its length.
    pub fn set_seed(&mut self, seed: u64) {
        let n = self.seeds.len().max(1) as u64;
        self.seeds = (seed..seed + n).collect();
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::from_spec(&self.schedule)
    }

    pub fn distribution(&self, name: &str) -> Result<DistributionSpec> {
        self.distributions
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown distribution `{name}`")))?
            .resolve()
    }

    fn labeled(&self, name: &str) -> Result<LabeledGmm> {
        match self.distribution(name)? {
            DistributionSpec::Labeled(g) => Ok(g),
            _ => Err(Error::Config(format!("distribution `{name}` is not a labeled mixture"))),
        }
    }

    /// A leaf model realized on `schedule`.
    pub fn model(&self, name: &str, schedule: &NoiseSchedule) -> Result<Arc<dyn ScoreModel>> {
        let spec = self.models.get(name).ok_or_else(|| Error::Config(format!("unknown model `{name}`")))?;
        Ok(match spec {
            ModelSpec::Analytic { distribution, label: Some(y) } => {
                Arc::new(AnalyticModel::labeled(name, self.labeled(distribution)?, Some(*y), schedule.clone())?)
            }
            ModelSpec::Analytic { distribution, label: None } => {
                Arc::new(self.distribution(distribution)?.analytic(name, schedule)?)
            }
            ModelSpec::Classifier { distribution, label } => {
                Arc::new(ClassifierModel::new(self.labeled(distribution)?, *label, schedule.clone())?)
            }
            ModelSpec::Neural { checkpoint, architecture, parameterization, .. } => {
                let mut m = load_matching(checkpoint, architecture, *parameterization)?;
                m.set_name(name);
                Arc::new(m)
            }
        })
    }

    /// The configured composition on the configured schedule.
    pub fn tree(&self) -> Result<CompositionTree> {
        self.tree_on(&self.schedule()?)
    }

    pub fn tree_on(&self, schedule: &NoiseSchedule) -> Result<CompositionTree> {
        let spec = self.tree.as_ref().ok_or_else(|| Error::Config("config has no tree".into()))?;
        spec.build(&|name| self.model(name, schedule))
    }

    /// A built-in configuration.
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let add = |cfg: &mut ExperimentConfig, model: &str, dist: &str| {
            cfg.distributions.insert(dist.into(), DistributionSpec::preset(dist));
            cfg.models.insert(model.into(), ModelSpec::Analytic { distribution: dist.into(), label: None });
        };
        match name {
            "product2d" | "equal-steps-baseline" => {
                add(&mut cfg, "ring", "ring");
                add(&mut cfg, "box", "box");
                cfg.tree = Some(TreeSpec::Product { children: vec![TreeSpec::leaf("ring"), TreeSpec::leaf("box")] });
                cfg.metrics.components = Some(8);
            }
            "mixture2d" => {
                add(&mut cfg, "left", "column_left");
                add(&mut cfg, "right", "column_right");
                cfg.tree = Some(TreeSpec::Mixture {
                    children: vec![TreeSpec::leaf("left"), TreeSpec::leaf("right")],
                    weights: None,
                });
                cfg.metrics.components = Some(6);
            }
            "guidance2d" => {
                cfg.distributions.insert("labeled".into(), DistributionSpec::preset("labeled"));
                cfg.models.insert("joint".into(), ModelSpec::Analytic { distribution: "labeled".into(), label: None });
                cfg.models.insert("classifier".into(), ModelSpec::Classifier { distribution: "labeled".into(), label: 1 });
                cfg.tree = Some(TreeSpec::Guidance {
                    prior: Box::new(TreeSpec::leaf("joint")),
                    lambda: 3.0,
                    term: TermSpec::Explicit { classifier: Box::new(TreeSpec::leaf("classifier")) },
                });
                cfg.metrics.components = Some(2);
            }
            "ring-epsilon" | "ring-energy-l2" => {
                let parameterization =
                    if name == "ring-epsilon" { Parameterization::Epsilon } else { Parameterization::EnergyL2 };
                cfg.distributions.insert("ring".into(), DistributionSpec::preset("ring"));
                cfg.models.insert(
                    "ring".into(),
                    ModelSpec::Neural {
                        distribution: "ring".into(),
                        parameterization,
                        checkpoint: PathBuf::from(format!("out/{name}.ckpt")),
                        architecture: MlpArchitecture::default(),
                        train: TrainConfig::default(),
                        resume: false,
                    },
                );
                cfg.tree = Some(TreeSpec::leaf("ring"));
                cfg.sampler =
                    if parameterization.has_energy() { SamplerConfig::default() } else { SamplerConfig::reverse() };
            }
            other => {
                return Err(Error::Config(format!("unknown preset `{other}`; expected one of {}", PRESETS.join(", "))))
            }
        }
        if cfg.models.values().all(|m| !matches!(m, ModelSpec::Neural { .. })) {
            cfg.sampler = SamplerConfig::fixed_2d(SamplerKind::HmcPmr);
        }
        cfg.out = PathBuf::from("out").join(name);
        if let Some(ModelSpec::Neural { checkpoint, .. }) = cfg.models.get_mut("ring") {
            *checkpoint = cfg.out.join("ring.ckpt");
        }
        Ok(cfg)
    }
}
