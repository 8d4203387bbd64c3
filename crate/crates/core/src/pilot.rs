//! Pilot-sample construction.
//!
//! The pilot sample holds controls only and never shares units with the
//! analysis sample that is subsequently matched, so outcome relationships can
//! be estimated from it without touching the analysis outcomes.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{DataError, Role, StudyData};
use crate::matchopt::{apply_constraints, match_one_to_k, rank_mahalanobis, MatchError, MatchSpec};
use crate::rng::seeded;

pub const MIN_CONTROLS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PilotMode {
    /// A separate table supplies the pilot.
    External,
    /// A random share of the analysis controls.
    RandomSplit { fraction: f64 },
    /// One control drawn at random from each treated unit's 1:k matched set.
    MatchedPilot { controls_per_treated: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PilotStrategy {
    pub mode: PilotMode,
    pub seed: u64,
}

impl PilotStrategy {
    pub fn random_split(fraction: f64, seed: u64) -> Self {
        Self { mode: PilotMode::RandomSplit { fraction }, seed }
    }

    pub fn matched(seed: u64) -> Self {
        Self { mode: PilotMode::MatchedPilot { controls_per_treated: 2 }, seed }
    }

    pub fn external() -> Self {
        Self { mode: PilotMode::External, seed: 0 }
    }
}

impl Default for PilotStrategy {
    fn default() -> Self {
        Self::random_split(0.15, 0)
    }
}

#[derive(Debug, Error)]
pub enum PilotError {
    #[error("pilot schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("need at least {required} analysis controls, found {found}")]
    InsufficientControls { found: usize, required: usize },
    #[error("unit `{0}` is in both the pilot and the analysis sample")]
    OverlapDetected(String),
    #[error("external pilot mode needs an external table")]
    MissingExternal,
    #[error("pilot fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("controls_per_treated must be at least 1")]
    InvalidControlsPerTreated,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

#[derive(Debug, Clone)]
pub struct PilotOutput {
    pub pilot: StudyData,
    /// Analysis sample with pilot units removed (unchanged in external mode).
    pub analysis: StudyData,
}

/// Columns expanded from the named schema variables.
fn expanded_columns(data: &StudyData, variables: &[String]) -> Vec<String> {
    data.columns()
        .iter()
        .filter(|c| variables.contains(&c.name) || c.origin.as_ref().is_some_and(|(p, _)| variables.contains(p)))
        .map(|c| c.name.clone())
        .collect()
}

fn check_schema(analysis: &StudyData, external: &StudyData, exclusions: &[String]) -> Result<(), PilotError> {
    for spec in analysis.schema().iter().filter(|s| !exclusions.contains(&s.name)) {
        match external.schema().iter().find(|e| e.name == spec.name) {
            None => return Err(PilotError::SchemaMismatch(format!("`{}` missing from pilot", spec.name))),
            Some(e) if e != spec => return Err(PilotError::SchemaMismatch(format!("`{}` declared differently", spec.name))),
            Some(_) => {}
        }
    }
    if let Some(extra) = external
        .schema()
        .iter()
        .find(|e| !exclusions.contains(&e.name) && !analysis.schema().iter().any(|s| s.name == e.name))
    {
        return Err(PilotError::SchemaMismatch(format!("`{}` not in analysis schema", extra.name)));
    }
    Ok(())
}

fn check_disjoint(pilot: &StudyData, analysis: &StudyData) -> Result<(), PilotError> {
    let ids: HashSet<&str> = analysis.unit_ids().iter().map(String::as_str).collect();
    match pilot.unit_ids().iter().find(|id| ids.contains(id.as_str())) {
        Some(id) => Err(PilotError::OverlapDetected(id.clone())),
        None => Ok(()),
    }
}

fn split_off(analysis: &StudyData, mut pilot_rows: Vec<usize>) -> Result<PilotOutput, PilotError> {
    pilot_rows.sort_unstable();
    let taken: HashSet<usize> = pilot_rows.iter().copied().collect();
    let rest: Vec<usize> = (0..analysis.n()).filter(|i| !taken.contains(i)).collect();
    let pilot = analysis.subset(&pilot_rows).with_role(Role::Pilot);
    let reduced = analysis.subset(&rest);
    check_disjoint(&pilot, &reduced)?;
    Ok(PilotOutput { pilot, analysis: reduced })
}

/// Builds the pilot sample.
///
/// `exclusions` names schema variables that do not overlap between an
/// external pilot and the analysis table (calendar year, for instance).
/// They are removed from the pilot, so they get no outcome correlation, but
/// stay in the analysis sample for matching.
pub fn build_pilot(
    analysis: StudyData,
    strategy: &PilotStrategy,
    external: Option<StudyData>,
    exclusions: &[String],
) -> Result<PilotOutput, PilotError> {
    let controls = analysis.control_rows();
    match strategy.mode {
        PilotMode::External => {
            let external = external.ok_or(PilotError::MissingExternal)?;
            check_schema(&analysis, &external, exclusions)?;
            let drop = expanded_columns(&external, exclusions);
            let rows = external.control_rows();
            if rows.is_empty() {
                return Err(PilotError::InsufficientControls { found: 0, required: 1 });
            }
            if rows.len() < external.n() {
                log::warn!("dropping {} treated rows from the external pilot", external.n() - rows.len());
            }
            let pilot = external.subset(&rows).drop_columns(&drop)?.with_role(Role::Pilot);
            Ok(PilotOutput { pilot, analysis })
        }
        _ if controls.len() < MIN_CONTROLS => {
            Err(PilotError::InsufficientControls { found: controls.len(), required: MIN_CONTROLS })
        }
        PilotMode::RandomSplit { fraction } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(PilotError::InvalidFraction(fraction));
            }
            let size = ((fraction * controls.len() as f64).round() as usize).clamp(1, controls.len() - 1);
            let mut shuffled = controls;
            shuffled.shuffle(&mut seeded(strategy.seed));
            shuffled.truncate(size);
            split_off(&analysis, shuffled)
        }
        PilotMode::MatchedPilot { controls_per_treated } => {
            if controls_per_treated == 0 {
                return Err(PilotError::InvalidControlsPerTreated);
            }
            let view = analysis.design();
            let names = view.column_names();
            let dist = rank_mahalanobis(view, &names)?;
            let problem = apply_constraints(&dist, &MatchSpec::default(), view)?;
            let sets = match_one_to_k(&problem, controls_per_treated)?;
            let mut rng = seeded(strategy.seed);
            let rows: Vec<usize> = sets
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| dist.controls[s[rng.random_range(0..s.len())]])
                .collect();
            split_off(&analysis, rows)
        }
    }
}
