//! Command-line front end: configuration, commands and reproduction runs.

pub mod commands;
pub mod config;
pub mod plot;
pub mod reproduce;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{cmd_eval, cmd_plot, cmd_sample, cmd_train, cmd_verify};
pub use config::{DistributionSpec, ExperimentConfig, ModelSpec, PlotConfig, PRESETS, SCHEMA_VERSION};
pub use reproduce::{cmd_reproduce, Summary};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "diffcomp", version, about = "Compositional sampling from 2D diffusion models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in configuration, used when no --config is given.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// First seed; a seed list keeps its length.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 picks one per core. 1 guarantees bit-identical output.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train the config's neural models.
    Train,
    /// Sample the config's composition.
    Sample,
    /// Score a sample file against ground truth.
    Eval,
    /// Run the score-identity verification suite.
    Verify,
    /// Scatter-plot sample files.
    Plot,
    /// Compare reverse diffusion and annealed MCMC over several seeds.
    Reproduce,
    /// Print the resolved configuration.
    Config,
}

impl Cli {
    /// The configuration with command-line overrides applied.
    pub fn resolve_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(p)) => ExperimentConfig::preset(p)?,
            (None, None) => return Err(Error::Config("pass --config PATH or --preset NAME".into())),
        };
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }

    pub fn execute(&self) -> Result<()> {
        let cfg = self.resolve_config()?;
        match self.command {
            Command::Train => {
                for o in cmd_train(&cfg)? {
                    let last = o.report.smoothed(o.report.losses.len(), 100);
                    println!("{}: final loss {last:.4e}, checkpoint {}", o.model, o.checkpoint.display());
                }
            }
            Command::Sample => {
                let (b, st) = cmd_sample(&cfg)?;
                println!("{} samples, {} score evaluations", b.len(), st.score_evaluations);
            }
            Command::Eval => {
                let r = cmd_eval(&cfg)?;
                println!("mmd {:.4e} ll {:.4} var {:?}", r.mmd, r.ll, r.var_l2);
            }
            Command::Verify => {
                for c in cmd_verify(&cfg)?.claims {
                    println!("{}: {:?}", c.claim, c.verdict);
                }
            }
            Command::Plot => {
                cmd_plot(&cfg)?;
                println!("{}", cfg.out.join("plot.svg").display());
            }
            Command::Reproduce => {
                let preset = self
                    .preset
                    .as_deref()
                    .ok_or_else(|| Error::Config("reproduce needs --preset NAME".into()))?;
                let s = cmd_reproduce(&cfg, preset)?;
                for c in &s.checks {
                    println!("{} {}: {}", if c.holds { "ok  " } else { "FAIL" }, c.name, c.detail);
                }
            }
            Command::Config => println!("{}", cfg.to_json()?),
        }
        Ok(())
    }
}

/// Parses `args`, runs the command on a pool of `--threads` workers and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.threads);
            return 2;
        }
    };
    match pool.install(|| cli.execute()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
