use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use jointvip_core::balance::{bias_table, write_bias_csv, write_prepost_csv, BalanceRow, PrePostRow};
use jointvip_core::dataset::{read_outcome_column, ColumnKind, StudyData};
use jointvip_core::inference::{mcnemar_table, sensitivity_report, McNemarResult, PairTable, PairedOutcomes, SensitivityReport};
use jointvip_core::matchopt::{
    apply_constraints, postmatch_bias, rank_mahalanobis, read_pairs_csv, solve_refined_balance, write_excluded_csv,
    write_pairs_csv, MatchObjective, MatchResult, MatchSpec, MatchSummary,
};
use jointvip_core::viz::{render, PlotConfig, PlotVariant};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Direction, OutcomeConfig, PipelineConfig};
use crate::design::{self, BinRecord, Design, PilotRecord, Seeds};
use crate::error::CliError;

pub const BIAS_TABLE: &str = "bias_table.csv";
pub const TIER_SUGGESTION: &str = "tier_suggestion.json";
pub const SCORES: &str = "scores.json";
pub const PAIRS: &str = "pairs.csv";
pub const EXCLUDED: &str = "excluded.csv";
pub const POSTMATCH: &str = "postmatch_bias.csv";
pub const MATCH_SUMMARY: &str = "match_summary.json";
pub const INFERENCE: &str = "inference.json";
pub const MANIFEST: &str = "run_manifest.json";

pub fn outcome_dir(cfg: &PipelineConfig, outcome: &OutcomeConfig) -> PathBuf {
    cfg.out_dir.join(&outcome.name)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("output directory {} is not writable: {e}", dir.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

#[derive(Debug, Clone, Serialize)]
pub struct TierCandidate {
    pub variable: String,
    pub bias: f64,
    /// Variable to list in a tier: the categorical parent of an indicator,
    /// the variable itself when binary, `None` when it must be binned first.
    pub tier_variable: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TierSuggestion {
    pub outcome: String,
    pub tier1_threshold: f64,
    pub tier2_threshold: f64,
    pub tier1: Vec<TierCandidate>,
    pub tier2: Vec<TierCandidate>,
    /// Deduplicated `tier_variable`s, ready to paste into the config.
    pub suggested_tiers: Vec<Vec<String>>,
    pub note: &'static str,
}

/// Groups rows by |bias| against the two thresholds. Flagged rows are skipped.
pub fn suggest_tiers(analysis: &StudyData, rows: &[BalanceRow], outcome: &str, t1: f64, t2: f64) -> TierSuggestion {
    let tier_variable = |name: &str| -> Option<String> {
        let col = analysis.column(name)?;
        match (&col.origin, col.kind) {
            (Some((parent, _)), _) => Some(parent.clone()),
            (None, ColumnKind::Binary) => Some(name.to_string()),
            _ => None,
        }
    };
    let mut tier1 = Vec::new();
    let mut tier2 = Vec::new();
    for r in rows.iter().filter(|r| r.is_plottable()) {
        let c = TierCandidate { variable: r.variable.clone(), bias: r.bias, tier_variable: tier_variable(&r.variable) };
        if r.bias.abs() >= t1 {
            tier1.push(c);
        } else if r.bias.abs() >= t2 {
            tier2.push(c);
        }
    }
    let mut used = std::collections::HashSet::new();
    let mut dedup = |cands: &[TierCandidate]| -> Vec<String> {
        cands.iter().filter_map(|c| c.tier_variable.clone()).filter(|v| used.insert(v.clone())).collect()
    };
    let s1 = dedup(&tier1);
    let s2 = dedup(&tier2);
    TierSuggestion {
        outcome: outcome.to_string(),
        tier1_threshold: t1,
        tier2_threshold: t2,
        tier1,
        tier2,
        suggested_tiers: [s1, s2].into_iter().filter(|t| !t.is_empty()).collect(),
        note: "suggestion only; tiers used for matching come from the config",
    }
}

/// Design plus its pre-match bias table.
pub struct VipStage {
    pub design: Design,
    pub rows: Vec<BalanceRow>,
}

pub fn vip_in_memory(cfg: &PipelineConfig, outcome: &OutcomeConfig) -> Result<VipStage, CliError> {
    let design = design::build(cfg, outcome)?;
    let rows = bias_table(design.analysis.design(), &design.pilot, &design.scores)?;
    Ok(VipStage { design, rows })
}

fn plot_config(cfg: &PipelineConfig, variant: PlotVariant) -> PlotConfig {
    PlotConfig { label_top_k: cfg.plot_label_top_k, ..PlotConfig::new(variant) }
}

#[derive(Serialize)]
struct ScoresFile<'a> {
    outcome: &'a str,
    pilot: &'a PilotRecord,
    models: &'a [jointvip_core::scores::ScoreModel],
    bins: &'a [BinRecord],
}

/// Writes the bias table, the three raw-measure plots, the tier
/// suggestion and the fitted score models.
pub fn write_vip(cfg: &PipelineConfig, outcome: &OutcomeConfig, stage: &VipStage) -> Result<Vec<PathBuf>, CliError> {
    let dir = outcome_dir(cfg, outcome);
    ensure_dir(&dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), CliError> {
        let p = dir.join(name);
        write_bytes(&p, &bytes)?;
        written.push(p);
        Ok(())
    };
    put(BIAS_TABLE, csv_bytes(|b| write_bias_csv(&stage.rows, b))?)?;
    for variant in [PlotVariant::JointvipAbs, PlotVariant::JointvipSigned, PlotVariant::Love] {
        let svg = render(&stage.rows, &plot_config(cfg, variant), None)?;
        put(&format!("{}.svg", variant.file_stem()), svg.into_bytes())?;
    }
    let suggestion = suggest_tiers(&stage.design.analysis, &stage.rows, &outcome.name, cfg.tier1_threshold, cfg.tier2_threshold);
    put(TIER_SUGGESTION, pretty(&suggestion)?)?;
    let scores = ScoresFile {
        outcome: &outcome.name,
        pilot: &stage.design.pilot_record,
        models: &stage.design.models,
        bins: &stage.design.bins,
    };
    put(SCORES, pretty(&scores)?)?;
    Ok(written)
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    Ok(text.into_bytes())
}

pub fn match_spec(cfg: &PipelineConfig, outcome: &OutcomeConfig) -> MatchSpec {
    MatchSpec {
        tiers: outcome.tiers.clone(),
        exact: cfg.exact.clone(),
        caliper_variable: cfg.caliper_variable.clone(),
        caliper_width_sd: cfg.caliper_width_sd,
        allow_exclusion: cfg.allow_exclusion,
        canonical_ties: cfg.canonical_ties,
        ..MatchSpec::default()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchReport {
    pub outcome: String,
    pub n_treated: usize,
    pub n_controls: usize,
    pub tiers: Vec<Vec<String>>,
    pub exact: Vec<String>,
    pub caliper_variable: Option<String>,
    pub caliper_width_sd: f64,
    #[serde(flatten)]
    pub summary: MatchSummary,
    pub objective: MatchObjective,
    pub max_abs_bias_pre: f64,
    pub max_abs_bias_post: f64,
}

pub struct MatchStage {
    pub result: MatchResult,
    pub post: Vec<BalanceRow>,
    pub paired: Vec<PrePostRow>,
    pub report: MatchReport,
}

fn max_abs_bias(rows: &[BalanceRow]) -> f64 {
    rows.iter().filter(|r| r.is_plottable()).map(|r| r.bias.abs()).fold(0.0, f64::max)
}

pub fn match_in_memory(cfg: &PipelineConfig, outcome: &OutcomeConfig, vip: &VipStage) -> Result<MatchStage, CliError> {
    let spec = match_spec(cfg, outcome);
    let view = vip.design.analysis.design();
    let columns = cfg.distance_columns();
    let names: Vec<&str> = columns.iter().map(String::as_str).collect();
    let dist = rank_mahalanobis(view, &names)?;
    let problem = apply_constraints(&dist, &spec, view)?;
    let result = solve_refined_balance(&problem, &spec)?;
    log::info!(
        "{}: {} pairs, {} treated excluded, tier TV {:?}",
        outcome.name,
        result.pairs.len(),
        result.excluded_treated.len(),
        result.tier_tv
    );
    let (post, paired) = postmatch_bias(&result, view, &vip.design.pilot, &vip.design.scores, &vip.rows)?;
    let report = MatchReport {
        outcome: outcome.name.clone(),
        n_treated: problem.n_treated(),
        n_controls: problem.n_controls(),
        tiers: spec.tiers.clone(),
        exact: spec.exact.clone(),
        caliper_variable: spec.caliper_variable.clone(),
        caliper_width_sd: spec.caliper_width_sd,
        summary: result.summary(&problem),
        objective: result.objective.clone(),
        max_abs_bias_pre: max_abs_bias(&vip.rows),
        max_abs_bias_post: max_abs_bias(&post),
    };
    Ok(MatchStage { result, post, paired, report })
}

pub fn write_match(cfg: &PipelineConfig, outcome: &OutcomeConfig, vip: &VipStage, stage: &MatchStage) -> Result<Vec<PathBuf>, CliError> {
    let dir = outcome_dir(cfg, outcome);
    ensure_dir(&dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), CliError> {
        let p = dir.join(name);
        write_bytes(&p, &bytes)?;
        written.push(p);
        Ok(())
    };
    put(PAIRS, csv_bytes(|b| write_pairs_csv(&stage.result, b))?)?;
    put(EXCLUDED, csv_bytes(|b| write_excluded_csv(&stage.result, b))?)?;
    put(POSTMATCH, csv_bytes(|b| write_prepost_csv(&stage.paired, b))?)?;
    let svg = render(&vip.rows, &plot_config(cfg, PlotVariant::JointvipPrepost), Some(&stage.post))?;
    put(&format!("{}.svg", PlotVariant::JointvipPrepost.file_stem()), svg.into_bytes())?;
    put(MATCH_SUMMARY, pretty(&stage.report)?)?;
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct GridPoint {
    pub gamma: f64,
    pub p_upper: f64,
    pub p_exact: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivitySection {
    pub alpha: f64,
    pub step: f64,
    pub threshold_gamma: Option<f64>,
    pub threshold_unbounded: bool,
    pub grid: Vec<GridPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InferenceReport {
    pub outcome: String,
    pub direction: Direction,
    pub table: PairTable,
    pub n_pairs: u64,
    pub treated_rate: f64,
    pub control_rate: f64,
    pub risk_difference: f64,
    pub z: f64,
    pub p_normal: f64,
    pub p_exact: f64,
    pub p_two_sided: f64,
    pub significant: bool,
    pub sensitivity: SensitivitySection,
}

/// McNemar test and sensitivity analysis for one table.
pub fn infer_table(outcome: &str, table: PairTable, cfg: &PipelineConfig) -> Result<InferenceReport, CliError> {
    let forward: McNemarResult = mcnemar_table(table)?;
    // the one-sided test looks for more events in the favoured arm
    let (t, c) = match cfg.direction {
        Direction::Greater => (table.treated_only, table.control_only),
        Direction::Less => (table.control_only, table.treated_only),
    };
    let oriented = mcnemar_table(PairTable { treated_only: t, control_only: c, ..table })?;
    let report: SensitivityReport = sensitivity_report(t, c, cfg.alpha, cfg.gamma_step, cfg.gamma_grid_extra)?;
    let n = table.n_pairs() as f64;
    let significant = oriented.p_one_sided < cfg.alpha;
    Ok(InferenceReport {
        outcome: outcome.to_string(),
        direction: cfg.direction,
        table,
        n_pairs: table.n_pairs(),
        treated_rate: (table.both_event + table.treated_only) as f64 / n,
        control_rate: (table.both_event + table.control_only) as f64 / n,
        risk_difference: forward.risk_difference,
        z: oriented.z,
        p_normal: oriented.p_one_sided,
        p_exact: oriented.p_exact,
        p_two_sided: forward.p_two_sided,
        significant,
        sensitivity: SensitivitySection {
            alpha: report.alpha,
            step: report.step,
            threshold_gamma: (report.threshold.significant && !report.threshold.unbounded).then_some(report.threshold.gamma),
            threshold_unbounded: report.threshold.unbounded,
            grid: report
                .gamma_grid
                .iter()
                .zip(&report.p_upper)
                .zip(&report.p_exact)
                .map(|((&gamma, &p_upper), &p_exact)| GridPoint { gamma, p_upper, p_exact })
                .collect(),
        },
    })
}

/// Reads pairs and the analysis outcome column, then tests.
pub fn infer_from_files(cfg: &PipelineConfig, outcome: &OutcomeConfig, pairs_path: &Path) -> Result<InferenceReport, CliError> {
    let file = fs::File::open(pairs_path).map_err(|e| CliError::io(pairs_path, e))?;
    let pairs = read_pairs_csv(file)?;
    let outcomes = read_outcome_column(&cfg.analysis_csv, &cfg.id_column, outcome.column())?;
    let paired = PairedOutcomes::from_ids(&pairs, &outcomes)?;
    infer_table(&outcome.name, paired.table(), cfg)
}

pub fn write_infer(cfg: &PipelineConfig, outcome: &OutcomeConfig, report: &InferenceReport) -> Result<PathBuf, CliError> {
    let dir = outcome_dir(cfg, outcome);
    ensure_dir(&dir)?;
    let p = dir.join(INFERENCE);
    write_json(&p, report)?;
    Ok(p)
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub config_hash: String,
    pub seeds: Seeds,
    pub inputs: Vec<FileDigest>,
    /// Output files per outcome, relative to the output directory.
    pub outputs: BTreeMap<String, Vec<FileDigest>>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digest(path: &Path, label: String) -> Result<FileDigest, CliError> {
    Ok(FileDigest { file: label, sha256: sha256_file(path)? })
}

pub fn build_manifest(cfg: &PipelineConfig, outputs: &[(String, Vec<PathBuf>)]) -> Result<Manifest, CliError> {
    let file_name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut inputs = vec![digest(&cfg.analysis_csv, file_name(&cfg.analysis_csv))?];
    if let Some(p) = &cfg.pilot_csv {
        inputs.push(digest(p, file_name(p))?);
    }
    let mut out = BTreeMap::new();
    for (name, files) in outputs {
        let mut digests = files
            .iter()
            .map(|p| digest(p, format!("{name}/{}", file_name(p))))
            .collect::<Result<Vec<_>, _>>()?;
        digests.sort_by(|a, b| a.file.cmp(&b.file));
        out.insert(name.clone(), digests);
    }
    Ok(Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        core_version: jointvip_core::VERSION,
        config_hash: cfg.hash(),
        seeds: Seeds::from_config(cfg),
        inputs,
        outputs: out,
    })
}

pub fn write_manifest(cfg: &PipelineConfig, manifest: &Manifest) -> Result<PathBuf, CliError> {
    ensure_dir(&cfg.out_dir)?;
    let p = cfg.out_dir.join(MANIFEST);
    write_json(&p, manifest)?;
    Ok(p)
}
