//! Configuration-driven jointVIP pipeline: `vip`, `match`, `infer` and
//! `pipeline` subcommands writing deterministic artifacts per outcome.

pub mod commands;
pub mod config;
pub mod design;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::*;
use crate::config::{OutcomeConfig, PipelineConfig};
pub use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "jointvip", version, about = "Variable prioritization, refined-balance matching and matched-pair inference")]
pub struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Global seed; overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bias table, jointVIP and Love plots, tier suggestion.
    Vip {
        /// Only this outcome.
        #[arg(long)]
        outcome: Option<String>,
    },
    /// Refined-balance match and post-match balance.
    Match {
        #[arg(long)]
        outcome: Option<String>,
    },
    /// McNemar test and sensitivity analysis on matched pairs.
    Infer {
        #[arg(long)]
        outcome: Option<String>,
        /// Pairs CSV; defaults to `<out>/<outcome>/pairs.csv`.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// vip, match and infer for every outcome, then a run manifest.
    Pipeline,
}

/// Loads the config and applies command-line overrides.
pub fn effective_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn selected<'a>(cfg: &'a PipelineConfig, name: &Option<String>) -> Result<Vec<&'a OutcomeConfig>, CliError> {
    match name {
        Some(n) => Ok(vec![cfg.outcome(n)?]),
        None => Ok(cfg.outcomes.iter().collect()),
    }
}

/// Runs `f` on each outcome, in parallel when the feature is enabled.
/// Results keep config order; the first error in that order wins.
fn per_outcome<'a, T: Send>(
    outcomes: &[&'a OutcomeConfig],
    f: impl Fn(&'a OutcomeConfig) -> Result<T, CliError> + Sync + Send,
) -> Result<Vec<T>, CliError> {
    #[cfg(feature = "parallel")]
    let results: Vec<Result<T, CliError>> = {
        use rayon::prelude::*;
        outcomes.par_iter().map(|o| f(o).map_err(|e| e.context(&o.name))).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<T, CliError>> = outcomes.iter().map(|o| f(o).map_err(|e| e.context(&o.name))).collect();
    results.into_iter().collect()
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Vip { outcome } => {
            per_outcome(&selected(&cfg, outcome)?, |o| {
                let stage = vip_in_memory(&cfg, o)?;
                write_vip(&cfg, o, &stage)
            })?;
        }
        Command::Match { outcome } => {
            per_outcome(&selected(&cfg, outcome)?, |o| {
                let vip = vip_in_memory(&cfg, o)?;
                let m = match_in_memory(&cfg, o, &vip)?;
                write_match(&cfg, o, &vip, &m)
            })?;
        }
        Command::Infer { outcome, pairs } => {
            let chosen = selected(&cfg, outcome)?;
            if pairs.is_some() && chosen.len() != 1 {
                return Err(CliError::Config("--pairs needs --outcome when the config has several outcomes".into()));
            }
            per_outcome(&chosen, |o| {
                let path = pairs.clone().unwrap_or_else(|| outcome_dir(&cfg, o).join(PAIRS));
                let report = infer_from_files(&cfg, o, &path)?;
                write_infer(&cfg, o, &report)
            })?;
        }
        Command::Pipeline => {
            run_pipeline(&cfg)?;
        }
    }
    Ok(())
}

/// Full run; returns the manifest that was written.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest, CliError> {
    let outcomes: Vec<&OutcomeConfig> = cfg.outcomes.iter().collect();
    let outputs = per_outcome(&outcomes, |o| {
        let vip = vip_in_memory(cfg, o)?;
        let mut files = write_vip(cfg, o, &vip)?;
        let m = match_in_memory(cfg, o, &vip)?;
        files.extend(write_match(cfg, o, &vip, &m)?);
        // the outcome is read only now, from the written pairs
        let report = infer_from_files(cfg, o, &outcome_dir(cfg, o).join(PAIRS))?;
        files.push(write_infer(cfg, o, &report)?);
        Ok((o.name.clone(), files))
    })?;
    let manifest = build_manifest(cfg, &outputs)?;
    write_manifest(cfg, &manifest)?;
    Ok(manifest)
}
