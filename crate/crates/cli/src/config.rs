//! Pipeline configuration: one JSON document with flat keys.
//!
//! Relative paths resolve against the directory holding the config file.
//! See `demo/config.schema.md` for the key reference.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use jointvip_core::dataset::{VariableKind, VariableSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const PROPENSITY: &str = "propensity";
pub const PROGNOSTIC: &str = "prognostic";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotModeName {
    External,
    RandomSplit,
    MatchedPilot,
}

/// `"cv"` or a fixed non-negative penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSetting {
    Fixed(f64),
    Named(LambdaName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaName {
    Cv,
}

/// Which arm is expected to have more events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Greater,
    Less,
}

/// Turns a continuous column or score into a nominal variable usable in
/// tiers or exact blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinRule {
    pub variable: String,
    /// Name of the binned variable; defaults to `<variable>_bin`.
    #[serde(default)]
    pub name: Option<String>,
    /// Equal-probability bins over the analysis sample.
    #[serde(default)]
    pub quantiles: Option<usize>,
    /// Interior cut points; bins are left-open, right-closed.
    #[serde(default)]
    pub cutpoints: Option<Vec<f64>>,
}

impl BinRule {
    pub fn output_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}_bin", self.variable))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeConfig {
    /// Label, also the output subdirectory.
    pub name: String,
    /// CSV column; defaults to `name`.
    #[serde(default)]
    pub column: Option<String>,
    /// Balance tiers in priority order.
    #[serde(default)]
    pub tiers: Vec<Vec<String>>,
}

impl OutcomeConfig {
    pub fn column(&self) -> &str {
        self.column.as_deref().unwrap_or(&self.name)
    }
}

fn default_id() -> String {
    "id".into()
}
fn default_treatment() -> String {
    "treated".into()
}
fn default_fraction() -> f64 {
    0.15
}
fn default_per_treated() -> usize {
    2
}
fn default_lambda() -> LambdaSetting {
    LambdaSetting::Named(LambdaName::Cv)
}
fn default_folds() -> usize {
    5
}
fn yes() -> bool {
    true
}
fn default_width() -> f64 {
    0.2
}
fn default_tier1() -> f64 {
    0.02
}
fn default_tier2() -> f64 {
    0.01
}
fn default_alpha() -> f64 {
    jointvip_core::inference::DEFAULT_ALPHA
}
fn default_step() -> f64 {
    jointvip_core::inference::DEFAULT_GAMMA_STEP
}
fn default_grid_extra() -> u64 {
    20
}
fn default_direction() -> Direction {
    Direction::Greater
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_top_k() -> usize {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub analysis_csv: PathBuf,
    #[serde(default)]
    pub pilot_csv: Option<PathBuf>,
    #[serde(default = "default_id")]
    pub id_column: String,
    #[serde(default = "default_treatment")]
    pub treatment_column: String,
    pub variables: Vec<VariableSpec>,
    pub outcomes: Vec<OutcomeConfig>,

    /// Defaults to `external` when `pilot_csv` is set, else `random_split`.
    #[serde(default)]
    pub pilot_mode: Option<PilotModeName>,
    #[serde(default = "default_fraction")]
    pub pilot_fraction: f64,
    #[serde(default = "default_per_treated")]
    pub pilot_controls_per_treated: usize,
    /// Variables absent from (or not comparable in) the pilot.
    #[serde(default)]
    pub pilot_exclude: Vec<String>,

    #[serde(default = "default_lambda")]
    pub score_lambda: LambdaSetting,
    #[serde(default = "default_folds")]
    pub score_folds: usize,
    #[serde(default)]
    pub score_seed: Option<u64>,
    #[serde(default = "yes")]
    pub propensity_score: bool,
    #[serde(default = "yes")]
    pub prognostic_score: bool,

    /// Schema variables entering the distance; defaults to all.
    #[serde(default)]
    pub distance_variables: Option<Vec<String>>,
    #[serde(default)]
    pub exact: Vec<String>,
    #[serde(default)]
    pub caliper_variable: Option<String>,
    #[serde(default = "default_width")]
    pub caliper_width_sd: f64,
    #[serde(default)]
    pub bins: Vec<BinRule>,
    #[serde(default = "yes")]
    pub allow_exclusion: bool,
    #[serde(default)]
    pub canonical_ties: bool,

    #[serde(default = "default_tier1")]
    pub tier1_threshold: f64,
    #[serde(default = "default_tier2")]
    pub tier2_threshold: f64,
    #[serde(default = "default_top_k")]
    pub plot_label_top_k: usize,

    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_direction")]
    pub direction: Direction,
    #[serde(default = "default_step")]
    pub gamma_step: f64,
    /// Grid points reported past the threshold.
    #[serde(default = "default_grid_extra")]
    pub gamma_grid_extra: u64,

    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

/// What a tier or exact variable resolves to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NameKind {
    Nominal,
    Continuous,
    Unknown,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    /// Reads, resolves relative paths and validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.analysis_csv);
        if let Some(p) = self.pilot_csv.as_mut() {
            fix(p);
        }
        fix(&mut self.out_dir);
    }

    pub fn pilot_mode(&self) -> PilotModeName {
        self.pilot_mode.unwrap_or(if self.pilot_csv.is_some() { PilotModeName::External } else { PilotModeName::RandomSplit })
    }

    pub fn score_names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.propensity_score {
            v.push(PROPENSITY);
        }
        if self.prognostic_score {
            v.push(PROGNOSTIC);
        }
        v
    }

    fn spec(&self, name: &str) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| v.name == name)
    }

    fn kind_of(&self, name: &str) -> NameKind {
        if self.bins.iter().any(|b| b.output_name() == name) {
            return NameKind::Nominal;
        }
        if self.score_names().contains(&name) {
            return NameKind::Continuous;
        }
        match self.spec(name).map(|s| s.kind) {
            Some(VariableKind::Continuous) => NameKind::Continuous,
            Some(_) => NameKind::Nominal,
            None => NameKind::Unknown,
        }
    }

    fn nominal_ref(&self, name: &str, role: &str) -> Result<(), CliError> {
        match self.kind_of(name) {
            NameKind::Nominal => Ok(()),
            NameKind::Continuous => Err(CliError::Config(format!(
                "{role} variable `{name}` is continuous; add a `bins` rule and use the binned name"
            ))),
            NameKind::Unknown => Err(CliError::Config(format!("{role} variable `{name}` is not declared"))),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.variables.is_empty() {
            return bad("`variables` is empty".into());
        }
        let mut seen = HashSet::new();
        for v in &self.variables {
            if !seen.insert(v.name.as_str()) {
                return bad(format!("variable `{}` declared twice", v.name));
            }
            if v.kind == VariableKind::Categorical && v.levels.len() < 2 {
                return bad(format!("categorical `{}` needs at least two levels", v.name));
            }
            if self.score_names().contains(&v.name.as_str()) {
                return bad(format!("variable name `{}` is reserved for a fitted score", v.name));
            }
        }
        let reserved = [self.id_column.as_str(), self.treatment_column.as_str()];
        if self.outcomes.is_empty() {
            return bad("`outcomes` is empty".into());
        }
        let mut names = HashSet::new();
        for o in &self.outcomes {
            if o.name.is_empty() || !o.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return bad(format!("outcome name `{}` must be non-empty and use [A-Za-z0-9_-]", o.name));
            }
            if !names.insert(o.name.as_str()) {
                return bad(format!("outcome `{}` declared twice", o.name));
            }
            if reserved.contains(&o.column()) || self.spec(o.column()).is_some() {
                return bad(format!("outcome column `{}` clashes with another column", o.column()));
            }
            let mut in_tier = HashSet::new();
            for tier in &o.tiers {
                if tier.is_empty() {
                    return bad(format!("outcome `{}` has an empty tier", o.name));
                }
                for v in tier {
                    self.nominal_ref(v, "tier")?;
                    if !in_tier.insert(v.as_str()) {
                        return bad(format!("tier variable `{v}` appears twice for outcome `{}`", o.name));
                    }
                }
            }
        }
        for v in &self.variables {
            if reserved.contains(&v.name.as_str()) {
                return bad(format!("variable `{}` clashes with the id or treatment column", v.name));
            }
        }

        if self.pilot_mode() == PilotModeName::External && self.pilot_csv.is_none() {
            return bad("pilot_mode `external` needs `pilot_csv`".into());
        }
        if !(self.pilot_fraction > 0.0 && self.pilot_fraction < 1.0) {
            return bad(format!("pilot_fraction must lie in (0, 1), got {}", self.pilot_fraction));
        }
        if self.pilot_controls_per_treated == 0 {
            return bad("pilot_controls_per_treated must be at least 1".into());
        }
        for v in &self.pilot_exclude {
            if self.spec(v).is_none() {
                return bad(format!("pilot_exclude names unknown variable `{v}`"));
            }
        }

        if let LambdaSetting::Fixed(l) = self.score_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("score_lambda must be \"cv\" or a non-negative number, got {l}"));
            }
        }
        if self.score_folds < 2 {
            return bad("score_folds must be at least 2".into());
        }

        if let Some(d) = &self.distance_variables {
            if d.is_empty() {
                return bad("distance_variables is empty".into());
            }
            for v in d {
                if self.spec(v).is_none() {
                    return bad(format!("distance variable `{v}` is not declared"));
                }
            }
        }
        for v in &self.exact {
            self.nominal_ref(v, "exact")?;
        }
        if let Some(c) = &self.caliper_variable {
            if self.kind_of(c) != NameKind::Continuous {
                return bad(format!("caliper variable `{c}` must be a continuous variable or an enabled score"));
            }
        }
        if !(self.caliper_width_sd > 0.0 && self.caliper_width_sd.is_finite()) {
            return bad(format!("caliper_width_sd must be positive, got {}", self.caliper_width_sd));
        }

        let mut bin_names = HashSet::new();
        for b in &self.bins {
            let out = b.output_name();
            if !bin_names.insert(out.clone()) || self.spec(&out).is_some() {
                return bad(format!("bin name `{out}` is already in use"));
            }
            let source_ok = self.score_names().contains(&b.variable.as_str())
                || self.spec(&b.variable).is_some_and(|s| s.kind == VariableKind::Continuous);
            if !source_ok {
                return bad(format!("bin rule for `{}`: source must be a continuous variable or an enabled score", b.variable));
            }
            match (&b.quantiles, &b.cutpoints) {
                (Some(k), None) if *k >= 2 => {}
                (Some(k), None) => return bad(format!("bin rule for `{}`: quantiles must be at least 2, got {k}", b.variable)),
                (None, Some(c)) if !c.is_empty() && c.iter().all(|v| v.is_finite()) && c.windows(2).all(|w| w[0] < w[1]) => {}
                (None, Some(_)) => {
                    return bad(format!("bin rule for `{}`: cutpoints must be finite and strictly increasing", b.variable))
                }
                _ => return bad(format!("bin rule for `{}`: give exactly one of `quantiles` or `cutpoints`", b.variable)),
            }
        }

        if !(self.tier1_threshold > 0.0 && self.tier2_threshold > 0.0 && self.tier2_threshold <= self.tier1_threshold) {
            return bad("tier thresholds must be positive with tier2_threshold <= tier1_threshold".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.gamma_step > 0.0 && self.gamma_step.is_finite()) {
            return bad(format!("gamma_step must be positive, got {}", self.gamma_step));
        }
        Ok(())
    }

    /// Expanded design columns for the distance.
    pub fn distance_columns(&self) -> Vec<String> {
        let chosen: Vec<&VariableSpec> = match &self.distance_variables {
            Some(names) => self.variables.iter().filter(|v| names.contains(&v.name)).collect(),
            None => self.variables.iter().collect(),
        };
        chosen
            .iter()
            .flat_map(|v| match v.kind {
                VariableKind::Categorical => v.levels.iter().map(|l| v.indicator_name(l)).collect(),
                _ => vec![v.name.clone()],
            })
            .collect()
    }

    pub fn outcome(&self, name: &str) -> Result<&OutcomeConfig, CliError> {
        self.outcomes
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| CliError::Config(format!("outcome `{name}` is not in the config")))
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out_dir");
        }
        // serde_json maps are ordered by key, so this text is canonical
        let text = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Other outcome columns, skipped when reading one outcome.
    pub fn outcome_columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = self.outcomes.iter().map(|o| o.column().to_string()).collect();
        cols.dedup();
        cols
    }

    pub fn variable_kinds(&self) -> HashMap<&str, VariableKind> {
        self.variables.iter().map(|v| (v.name.as_str(), v.kind)).collect()
    }
}
