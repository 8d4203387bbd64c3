//! Optimal pair matching with exact blocks, a score caliper and refined
//! covariate balance.
//!
//! The pipeline is [`distance::rank_mahalanobis`] then
//! [`constraints::apply_constraints`] then [`solve_refined_balance`].
//! [`brute_force_match`] enumerates every matching of a small problem and
//! serves as the reference the flow solver is tested against.
//!
//! Objective, in priority order:
//!
//! 1. number of matched treated units (exclusions only when forced),
//! 2. `TV(m, X_1)`, `TV(m, X_1 u X_2)`, ... over the tier prefixes, measured
//!    in counts,
//! 3. total distance, scaled to integers at [`DISTANCE_SCALE`].
//!
//! Exact-match blocks share one network: pair edges only exist within a
//! block, while tier balance is counted over the whole match.

pub mod constraints;
pub mod distance;
pub mod flow;

mod brute;
mod refined;

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::balance::{bias_table, pair_rows, BalanceError, BalanceRow, PrePostRow, ScoreColumn};
use crate::dataset::{DataError, DesignView, StudyData};

pub use constraints::{apply_constraints, MatchProblem, TierLevel};
pub use distance::{rank_mahalanobis, rank_mahalanobis_with, DistanceMatrix};

/// Distances are rounded to multiples of `1 / DISTANCE_SCALE` inside the
/// solver.
pub const DISTANCE_SCALE: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    #[default]
    RankMahalanobis,
}

/// How the lexicographic objective is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    /// Weighted single solve, staged solves if the weights overflow.
    #[default]
    Auto,
    /// Weighted single solve only; overflow is an error.
    Penalty,
    /// One solve per objective, restricting to the optimal face each time.
    Lexicographic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    Penalty,
    Lexicographic,
    BruteForce,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchSpec {
    /// Tier variable sets, highest priority first.
    pub tiers: Vec<Vec<String>>,
    pub exact: Vec<String>,
    pub caliper_variable: Option<String>,
    pub caliper_width_sd: f64,
    pub distance: DistanceKind,
    pub allow_exclusion: bool,
    /// Break remaining ties toward the smallest sorted `(treated_id,
    /// control_id)` list, the rule [`brute_force_match`] uses.
    pub canonical_ties: bool,
    pub solver: SolverMode,
}

impl Default for MatchSpec {
    fn default() -> Self {
        Self {
            tiers: Vec::new(),
            exact: Vec::new(),
            caliper_variable: None,
            caliper_width_sd: 0.2,
            distance: DistanceKind::RankMahalanobis,
            allow_exclusion: true,
            canonical_ties: false,
            solver: SolverMode::Auto,
        }
    }
}

impl MatchSpec {
    pub fn validate(&self) -> Result<(), MatchError> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, tier) in self.tiers.iter().enumerate() {
            for v in tier {
                if let Some(&j) = seen.get(v.as_str()) {
                    if j != i {
                        return Err(MatchError::OverlappingTiers(v.clone()));
                    }
                }
                seen.insert(v, i);
            }
        }
        if !(self.caliper_width_sd > 0.0 && self.caliper_width_sd.is_finite()) {
            return Err(MatchError::InvalidCaliper(self.caliper_width_sd));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MatchError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("tier variable `{0}` is continuous; bin it first")]
    ContinuousTierVariable(String),
    #[error("variable `{0}` appears in more than one tier")]
    OverlappingTiers(String),
    #[error("caliper width must be positive and finite, got {0}")]
    InvalidCaliper(f64),
    #[error("flow network is infeasible")]
    FlowInfeasible,
    #[error("penalty weights overflow 64-bit costs")]
    PenaltyOverflow,
    #[error("problem too large for enumeration ({treated} treated, {controls} controls)")]
    TooLarge { treated: usize, controls: usize },
    #[error("{0} treated units cannot be matched and exclusion is disabled")]
    ExclusionRequired(usize),
    #[error("match is empty")]
    EmptyResult,
    #[error(transparent)]
    Balance(#[from] BalanceError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub pair_id: usize,
    pub treated_id: String,
    pub control_id: String,
    pub distance: f64,
    pub block_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockSummary {
    pub block_key: String,
    pub n_treated: usize,
    pub n_controls: usize,
    pub n_pairs: usize,
    pub n_excluded: usize,
}

/// Lexicographic objective; the derived order is the optimization order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct MatchObjective {
    pub unmatched: usize,
    pub tier_tv: Vec<u64>,
    pub scaled_distance: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub excluded_treated: Vec<String>,
    /// TV for each tier prefix.
    pub tier_tv: Vec<f64>,
    pub total_distance: f64,
    pub block_summaries: Vec<BlockSummary>,
    pub objective: MatchObjective,
    pub solver: SolverPath,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchSummary {
    pub n_pairs: usize,
    pub n_excluded: usize,
    pub tier_tv: Vec<f64>,
    pub total_distance: f64,
    pub caliper: Option<f64>,
    pub solver: SolverPath,
    pub blocks: Vec<BlockSummary>,
}

impl MatchResult {
    pub fn summary(&self, problem: &MatchProblem) -> MatchSummary {
        MatchSummary {
            n_pairs: self.pairs.len(),
            n_excluded: self.excluded_treated.len(),
            tier_tv: self.tier_tv.clone(),
            total_distance: self.total_distance,
            caliper: problem.caliper,
            solver: self.solver,
            blocks: self.block_summaries.clone(),
        }
    }

    /// Sorted `(treated_id, control_id)` list.
    pub fn pair_set(&self) -> Vec<(String, String)> {
        let mut v: Vec<_> = self.pairs.iter().map(|p| (p.treated_id.clone(), p.control_id.clone())).collect();
        v.sort();
        v
    }
}

/// Count-based TV per tier prefix: half the sum over cells of
/// `|treated - control|`.
pub fn tier_tv_counts(problem: &MatchProblem, pairs: &[(usize, usize)]) -> Vec<u64> {
    problem
        .tiers
        .iter()
        .map(|tier| {
            let mut diff = vec![0i64; tier.n_keys()];
            for &(t, c) in pairs {
                diff[tier.treated[t] as usize] += 1;
                diff[tier.controls[c] as usize] -= 1;
            }
            (diff.iter().map(|d| d.unsigned_abs()).sum::<u64>()) / 2
        })
        .collect()
}

pub(crate) fn objective_of(problem: &MatchProblem, pairs: &[(usize, usize)]) -> MatchObjective {
    MatchObjective {
        unmatched: problem.n_treated() - pairs.len(),
        tier_tv: tier_tv_counts(problem, pairs),
        scaled_distance: pairs.iter().map(|&(t, c)| refined::scale_distance(problem.distance(t, c))).sum(),
    }
}

/// Assembles a result from index pairs; pairs are reported in treated order.
pub(crate) fn build_result(
    problem: &MatchProblem,
    spec: &MatchSpec,
    mut pairs: Vec<(usize, usize)>,
    solver: SolverPath,
) -> Result<MatchResult, MatchError> {
    pairs.sort_unstable();
    let objective = objective_of(problem, &pairs);
    if !spec.allow_exclusion && objective.unmatched > 0 {
        return Err(MatchError::ExclusionRequired(objective.unmatched));
    }
    let mut matched = vec![false; problem.n_treated()];
    let mut blocks: Vec<BlockSummary> = problem
        .block_keys
        .iter()
        .map(|k| BlockSummary { block_key: k.clone(), n_treated: 0, n_controls: 0, n_pairs: 0, n_excluded: 0 })
        .collect();
    for &b in &problem.treated_block {
        blocks[b].n_treated += 1;
    }
    for &b in &problem.control_block {
        blocks[b].n_controls += 1;
    }
    let out_pairs: Vec<MatchedPair> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(t, c))| {
            matched[t] = true;
            blocks[problem.treated_block[t]].n_pairs += 1;
            MatchedPair {
                pair_id: i + 1,
                treated_id: problem.treated_ids[t].clone(),
                control_id: problem.control_ids[c].clone(),
                distance: problem.distance(t, c),
                block_key: problem.block_keys[problem.treated_block[t]].clone(),
            }
        })
        .collect();
    let mut excluded = Vec::new();
    for t in (0..problem.n_treated()).filter(|&t| !matched[t]) {
        blocks[problem.treated_block[t]].n_excluded += 1;
        excluded.push(problem.treated_ids[t].clone());
    }
    Ok(MatchResult {
        total_distance: out_pairs.iter().map(|p| p.distance).sum(),
        tier_tv: objective.tier_tv.iter().map(|&v| v as f64).collect(),
        pairs: out_pairs,
        excluded_treated: excluded,
        block_summaries: blocks,
        objective,
        solver,
    })
}

/// Pair edges sorted by `(treated_id, control_id)`.
fn canonical_order(problem: &MatchProblem, pairs: &[(usize, usize, usize)]) -> Vec<usize> {
    let mut order: Vec<&(usize, usize, usize)> = pairs.iter().collect();
    order.sort_by(|a, b| {
        (&problem.treated_ids[a.0], &problem.control_ids[a.1]).cmp(&(&problem.treated_ids[b.0], &problem.control_ids[b.1]))
    });
    order.into_iter().map(|p| p.2).collect()
}

/// Lexicographically optimal matching via min-cost flow.
pub fn solve_refined_balance(problem: &MatchProblem, spec: &MatchSpec) -> Result<MatchResult, MatchError> {
    let mut rn = refined::RefinedNetwork::build(problem, 1);
    let order = if spec.canonical_ties { canonical_order(problem, &rn.pairs) } else { Vec::new() };
    let solved = refined::solve(&mut rn, spec.solver, spec.canonical_ties, &order)?;
    let pairs: Vec<(usize, usize)> =
        rn.pairs.iter().filter(|&&(_, _, e)| solved.flow[e] == 1).map(|&(t, c, _)| (t, c)).collect();
    log::debug!("matched {} of {} treated via {:?}", pairs.len(), problem.n_treated(), solved.path);
    build_result(problem, spec, pairs, solved.path)
}

/// Exhaustive reference solver; ties go to the smallest sorted pair-id list.
pub fn brute_force_match(problem: &MatchProblem, spec: &MatchSpec) -> Result<MatchResult, MatchError> {
    let pairs = brute::enumerate(problem)?;
    build_result(problem, spec, pairs, SolverPath::BruteForce)
}

/// Distance, constraints and solve in one call.
pub fn match_units(view: DesignView<'_>, variables: &[&str], spec: &MatchSpec) -> Result<(MatchProblem, MatchResult), MatchError> {
    let dist = rank_mahalanobis(view, variables)?;
    let problem = apply_constraints(&dist, spec, view)?;
    let result = solve_refined_balance(&problem, spec)?;
    Ok((problem, result))
}

/// Optimal 1:k matching without tiers. Returns, per treated index, the
/// matched control indices (possibly fewer than `k`).
pub(crate) fn match_one_to_k(problem: &MatchProblem, k: usize) -> Result<Vec<Vec<usize>>, MatchError> {
    let mut rn = refined::RefinedNetwork::build(problem, k as i64);
    let solved = refined::solve(&mut rn, SolverMode::Auto, false, &[])?;
    let mut out = vec![Vec::new(); problem.n_treated()];
    for &(t, c, e) in &rn.pairs {
        if solved.flow[e] == 1 {
            out[t].push(c);
        }
    }
    Ok(out)
}

/// Row indices (into the source table) of matched treated and controls.
fn matched_rows(result: &MatchResult, ids: &[String]) -> Result<(Vec<usize>, Vec<usize>), MatchError> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let find = |id: &str| index.get(id).copied().ok_or_else(|| MatchError::Data(DataError::UnknownId(id.to_string())));
    let treated = result.pairs.iter().map(|p| find(&p.treated_id)).collect::<Result<_, _>>()?;
    let controls = result.pairs.iter().map(|p| find(&p.control_id)).collect::<Result<_, _>>()?;
    Ok((treated, controls))
}

/// Balance table over the matched units only, paired with `pre`.
///
/// Pilot quantities are unchanged; score columns are restricted to the
/// matched rows.
pub fn postmatch_bias(
    result: &MatchResult,
    analysis: DesignView<'_>,
    pilot: &StudyData,
    extra_scores: &[ScoreColumn],
    pre: &[BalanceRow],
) -> Result<(Vec<BalanceRow>, Vec<PrePostRow>), MatchError> {
    if result.pairs.is_empty() {
        return Err(MatchError::EmptyResult);
    }
    let (treated, controls) = matched_rows(result, analysis.unit_ids())?;
    let rows: Vec<usize> = treated.into_iter().chain(controls).collect();
    let matched = analysis.subset_redacted(&rows);
    let scores: Vec<ScoreColumn> = extra_scores
        .iter()
        .map(|s| ScoreColumn { name: s.name.clone(), analysis: rows.iter().map(|&r| s.analysis[r]).collect(), pilot: s.pilot.clone() })
        .collect();
    let post = bias_table(matched.design(), pilot, &scores)?;
    let paired = pair_rows(pre, &post);
    Ok((post, paired))
}

pub fn write_pairs_csv<W: Write>(result: &MatchResult, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["pair_id", "treated_id", "control_id", "distance", "block_key"])?;
    for p in &result.pairs {
        w.write_record([p.pair_id.to_string(), p.treated_id.clone(), p.control_id.clone(), format!("{}", p.distance), p.block_key.clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_excluded_csv<W: Write>(result: &MatchResult, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["treated_id"])?;
    for id in &result.excluded_treated {
        w.write_record([id])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `(treated_id, control_id)` pairs back from a pairs CSV.
pub fn read_pairs_csv<R: std::io::Read>(reader: R) -> Result<Vec<(String, String)>, DataError> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    };
    let (ti, ci) = (col("treated_id")?, col("control_id")?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push((rec[ti].to_string(), rec[ci].to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(distance: Vec<f64>, nt: usize, nc: usize) -> MatchProblem {
        MatchProblem {
            treated_ids: (0..nt).map(|i| format!("t{i}")).collect(),
            control_ids: (0..nc).map(|i| format!("c{i}")).collect(),
            admissible: vec![true; nt * nc],
            distance,
            treated_block: vec![0; nt],
            control_block: vec![0; nc],
            block_keys: vec!["all".into()],
            tiers: Vec::new(),
            caliper: None,
        }
    }

    #[test]
    fn single_pair() {
        let p = tiny(vec![0.7], 1, 1);
        let r = solve_refined_balance(&p, &MatchSpec::default()).unwrap();
        assert_eq!(r.pair_set(), vec![("t0".to_string(), "c0".to_string())]);
        assert!(r.excluded_treated.is_empty());
        assert_eq!(r.total_distance, 0.7);
    }

    #[test]
    fn zero_distance_tie_goes_to_smallest_ids() {
        let p = tiny(vec![0.0; 4], 2, 2);
        let spec = MatchSpec { canonical_ties: true, ..MatchSpec::default() };
        let a = solve_refined_balance(&p, &spec).unwrap();
        let b = brute_force_match(&p, &spec).unwrap();
        assert_eq!(a.pair_set(), b.pair_set());
        assert_eq!(a.pair_set()[0], ("t0".to_string(), "c0".to_string()));
    }

    #[test]
    fn exclusion_when_forced() {
        let mut p = tiny(vec![1.0, 2.0], 2, 1);
        p.admissible = vec![true, true];
        let r = solve_refined_balance(&p, &MatchSpec::default()).unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert_eq!(r.excluded_treated, vec!["t1".to_string()]);
        let strict = MatchSpec { allow_exclusion: false, ..MatchSpec::default() };
        assert!(matches!(solve_refined_balance(&p, &strict), Err(MatchError::ExclusionRequired(1))));
    }

    #[test]
    fn overlapping_tiers_rejected() {
        let spec = MatchSpec { tiers: vec![vec!["a".into()], vec!["a".into()]], ..MatchSpec::default() };
        assert!(matches!(spec.validate(), Err(MatchError::OverlappingTiers(_))));
        let bad = MatchSpec { caliper_width_sd: 0.0, ..MatchSpec::default() };
        assert!(matches!(bad.validate(), Err(MatchError::InvalidCaliper(_))));
    }

    #[test]
    fn one_to_two() {
        let d = vec![0.1, 0.2, 5.0, 5.0, 5.0, 5.0, 0.3, 0.4];
        let p = tiny(d, 2, 4);
        let m = match_one_to_k(&p, 2).unwrap();
        assert_eq!(m, vec![vec![0, 1], vec![2, 3]]);
    }
}
