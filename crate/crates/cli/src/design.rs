//! Design-stage inputs for one outcome: the outcome-free analysis table,
//! the pilot, fitted scores and binned variables.

use jointvip_core::balance::ScoreColumn;
use jointvip_core::dataset::{load_csv, CsvLayout, Role, StudyData};
use jointvip_core::pilot::{build_pilot, PilotMode, PilotStrategy};
use jointvip_core::rng::derive_seed;
use jointvip_core::scores::{prognostic_scores, propensity_scores, quantile_bins, LambdaChoice, QuantileBins, ScoreModel};
use serde::Serialize;

use crate::config::{LambdaSetting, OutcomeConfig, PilotModeName, PipelineConfig, PROGNOSTIC, PROPENSITY};
use crate::error::CliError;

/// Seed streams derived from the global seed.
const PILOT_STREAM: u64 = 1;
const SCORE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub global: u64,
    pub pilot: u64,
    pub score_cv: u64,
}

impl Seeds {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            global: cfg.seed,
            pilot: derive_seed(cfg.seed, PILOT_STREAM),
            score_cv: cfg.score_seed.unwrap_or_else(|| derive_seed(cfg.seed, SCORE_STREAM)),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BinRecord {
    pub name: String,
    pub source: String,
    pub bins: QuantileBins,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PilotRecord {
    pub strategy: PilotStrategy,
    pub n_pilot: usize,
    pub n_analysis: usize,
    pub n_treated: usize,
    pub excluded_variables: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Design {
    /// No outcome attached; scores and bins added as derived variables.
    pub analysis: StudyData,
    pub pilot: StudyData,
    pub scores: Vec<ScoreColumn>,
    pub models: Vec<ScoreModel>,
    pub bins: Vec<BinRecord>,
    pub pilot_record: PilotRecord,
}

fn strategy(cfg: &PipelineConfig, seeds: Seeds) -> PilotStrategy {
    let mode = match cfg.pilot_mode() {
        PilotModeName::External => PilotMode::External,
        PilotModeName::RandomSplit => PilotMode::RandomSplit { fraction: cfg.pilot_fraction },
        PilotModeName::MatchedPilot => PilotMode::MatchedPilot { controls_per_treated: cfg.pilot_controls_per_treated },
    };
    PilotStrategy { mode, seed: seeds.pilot }
}

fn lambda_choice(cfg: &PipelineConfig, seeds: Seeds) -> LambdaChoice {
    match cfg.score_lambda {
        LambdaSetting::Fixed(l) => LambdaChoice::Fixed(l),
        LambdaSetting::Named(_) => LambdaChoice::CrossValidated { folds: cfg.score_folds, seed: seeds.score_cv },
    }
}

/// Loads and prepares everything the design stage needs for one outcome.
///
/// The analysis outcome is only read when the pilot is carved out of the
/// analysis controls; the remaining analysis units lose it immediately.
pub fn build(cfg: &PipelineConfig, outcome: &OutcomeConfig) -> Result<Design, CliError> {
    let seeds = Seeds::from_config(cfg);
    let others: Vec<String> = cfg.outcome_columns().into_iter().filter(|c| c != outcome.column()).collect();
    let strategy = strategy(cfg, seeds);

    let (analysis, pilot) = match cfg.pilot_mode() {
        PilotModeName::External => {
            let layout = CsvLayout::new(&cfg.id_column, &cfg.treatment_column, None).ignoring(cfg.outcome_columns());
            let analysis = load_csv(&cfg.analysis_csv, &cfg.variables, &layout, Role::Analysis)?;
            let pilot_schema: Vec<_> = cfg.variables.iter().filter(|v| !cfg.pilot_exclude.contains(&v.name)).cloned().collect();
            let layout = CsvLayout::new(&cfg.id_column, &cfg.treatment_column, Some(outcome.column()))
                .ignoring(others.iter().cloned().chain(cfg.pilot_exclude.iter().cloned()));
            let path = cfg.pilot_csv.as_ref().expect("validated");
            let external = load_csv(path, &pilot_schema, &layout, Role::Pilot)?;
            let out = build_pilot(analysis, &strategy, Some(external), &cfg.pilot_exclude)?;
            (out.analysis, out.pilot)
        }
        _ => {
            let layout = CsvLayout::new(&cfg.id_column, &cfg.treatment_column, Some(outcome.column())).ignoring(others);
            let full = load_csv(&cfg.analysis_csv, &cfg.variables, &layout, Role::Analysis)?;
            let out = build_pilot(full, &strategy, None, &[])?;
            (out.analysis.without_outcome(), out.pilot)
        }
    };
    if !pilot.outcome_is_binary() && cfg.prognostic_score {
        log::info!("outcome `{}` is not binary; prognostic model is linear", outcome.name);
    }
    let pilot_record = PilotRecord {
        strategy,
        n_pilot: pilot.n(),
        n_analysis: analysis.n(),
        n_treated: analysis.n_treated(),
        excluded_variables: if cfg.pilot_mode() == PilotModeName::External { cfg.pilot_exclude.clone() } else { Vec::new() },
    };
    log::info!("{}: pilot {} units, analysis {} units", outcome.name, pilot.n(), analysis.n());

    let mut analysis = analysis;
    let choice = lambda_choice(cfg, seeds);
    let mut scores = Vec::new();
    let mut models = Vec::new();
    if cfg.propensity_score {
        let fit = propensity_scores(analysis.design(), Some(pilot.design()), choice).map_err(|e| CliError::from(e).context(PROPENSITY))?;
        analysis.add_derived(PROPENSITY, fit.analysis.clone())?;
        scores.push(ScoreColumn { name: PROPENSITY.into(), analysis: fit.analysis, pilot: fit.pilot.expect("pilot scored") });
        models.push(fit.model);
    }
    if cfg.prognostic_score {
        let fit = prognostic_scores(&pilot, analysis.design(), choice).map_err(|e| CliError::from(e).context(PROGNOSTIC))?;
        analysis.add_derived(PROGNOSTIC, fit.analysis.clone())?;
        scores.push(ScoreColumn { name: PROGNOSTIC.into(), analysis: fit.analysis, pilot: fit.pilot.expect("pilot scored") });
        models.push(fit.model);
    }

    let mut bins = Vec::new();
    for rule in &cfg.bins {
        let name = rule.output_name();
        let values = analysis
            .column(&rule.variable)
            .ok_or_else(|| CliError::Config(format!("bin source `{}` not found", rule.variable)))?
            .values
            .clone();
        let (qb, codes) = match (&rule.quantiles, &rule.cutpoints) {
            (Some(k), _) => quantile_bins(&values, *k).map_err(|e| CliError::from(e).context(&name))?,
            (_, Some(cuts)) => {
                let qb = QuantileBins { requested_k: cuts.len() + 1, cutpoints: cuts.clone() };
                let codes = values.iter().map(|&v| qb.assign(v)).collect();
                (qb, codes)
            }
            _ => unreachable!("validated"),
        };
        let mut counts = vec![0; qb.n_bins()];
        for &c in &codes {
            counts[c as usize] += 1;
        }
        analysis.add_nominal(&name, qb.labels(), codes)?;
        bins.push(BinRecord { name, source: rule.variable.clone(), bins: qb, counts });
    }

    Ok(Design { analysis, pilot, scores, models, bins, pilot_record })
}
