//! Matched-pair inference for binary outcomes.
//!
//! Under the sharp null of no effect, only discordant pairs carry
//! information: with `T` pairs where only the treated unit had the event and
//! `C` pairs where only the control did, `T ~ Binomial(T + C, 1/2)`. The
//! one-sided direction is "treated arm has more events". The sensitivity
//! bound replaces `1/2` with `Gamma / (1 + Gamma)`.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::stats::{binomial_upper_tail, normal_sf};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_GAMMA_STEP: f64 = 0.001;
/// Upper bound on the grid index searched for a threshold.
const MAX_GRID_INDEX: u64 = 1 << 40;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("no discordant pairs")]
    NoDiscordantPairs,
    #[error("gamma must be >= 1, got {0}")]
    InvalidGamma(f64),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("grid step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("outcome for unit `{id}` is {value}, not 0/1")]
    NonBinaryOutcome { id: String, value: f64 },
    #[error("no outcome for unit `{0}`")]
    MissingOutcome(String),
    #[error("no pairs")]
    EmptyPairs,
}

/// Pair counts in the layout of a matched 2x2 table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairTable {
    pub both_event: u64,
    pub treated_only: u64,
    pub control_only: u64,
    pub neither: u64,
}

impl PairTable {
    pub fn n_pairs(&self) -> u64 {
        self.both_event + self.treated_only + self.control_only + self.neither
    }

    pub fn discordant(&self) -> u64 {
        self.treated_only + self.control_only
    }
}

/// `(treated outcome, control outcome)` per matched pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedOutcomes {
    pub pairs: Vec<(u8, u8)>,
}

impl PairedOutcomes {
    pub fn new(pairs: Vec<(u8, u8)>) -> Result<Self, InferenceError> {
        if pairs.is_empty() {
            return Err(InferenceError::EmptyPairs);
        }
        Ok(Self { pairs })
    }

    /// Expands a table into pairs (order: both, treated-only, control-only,
    /// neither).
    pub fn from_table(t: PairTable) -> Result<Self, InferenceError> {
        let mut pairs = Vec::with_capacity(t.n_pairs() as usize);
        for (count, pair) in [(t.both_event, (1, 1)), (t.treated_only, (1, 0)), (t.control_only, (0, 1)), (t.neither, (0, 0))] {
            pairs.extend(std::iter::repeat_n(pair, count as usize));
        }
        Self::new(pairs)
    }

    /// Looks up outcomes for `(treated_id, control_id)` pairs.
    pub fn from_ids(pairs: &[(String, String)], outcomes: &HashMap<String, f64>) -> Result<Self, InferenceError> {
        let get = |id: &String| -> Result<u8, InferenceError> {
            match outcomes.get(id) {
                None => Err(InferenceError::MissingOutcome(id.clone())),
                Some(&v) if v == 0.0 => Ok(0),
                Some(&v) if v == 1.0 => Ok(1),
                Some(&v) => Err(InferenceError::NonBinaryOutcome { id: id.clone(), value: v }),
            }
        };
        Self::new(pairs.iter().map(|(t, c)| Ok((get(t)?, get(c)?))).collect::<Result<_, _>>()?)
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn table(&self) -> PairTable {
        let mut t = PairTable { both_event: 0, treated_only: 0, control_only: 0, neither: 0 };
        for &p in &self.pairs {
            match p {
                (1, 1) => t.both_event += 1,
                (1, 0) => t.treated_only += 1,
                (0, 1) => t.control_only += 1,
                _ => t.neither += 1,
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McNemarResult {
    pub table: PairTable,
    pub n_pairs: u64,
    pub z: f64,
    /// Normal approximation, no continuity correction.
    pub p_one_sided: f64,
    /// `P(Binomial(T + C, 1/2) >= T)`.
    pub p_exact: f64,
    pub p_two_sided: f64,
    pub risk_difference: f64,
}

fn two_sided(p: f64) -> f64 {
    (2.0 * p.min(1.0 - p)).min(1.0)
}

pub fn mcnemar_table(table: PairTable) -> Result<McNemarResult, InferenceError> {
    let (t, c) = (table.treated_only, table.control_only);
    let nd = t + c;
    if nd == 0 {
        return Err(InferenceError::NoDiscordantPairs);
    }
    let z = (t as f64 - c as f64) / (nd as f64).sqrt();
    let p = normal_sf(z);
    Ok(McNemarResult {
        table,
        n_pairs: table.n_pairs(),
        z,
        p_one_sided: p,
        p_exact: binomial_upper_tail(nd, t, 0.5),
        p_two_sided: two_sided(p),
        risk_difference: (t as f64 - c as f64) / table.n_pairs() as f64,
    })
}

pub fn mcnemar(pairs: &PairedOutcomes) -> Result<McNemarResult, InferenceError> {
    mcnemar_table(pairs.table())
}

/// Worst-case one-sided bound at one `Gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensitivityBound {
    pub gamma: f64,
    pub z: f64,
    pub p_upper: f64,
    /// `P(Binomial(T + C, Gamma / (1 + Gamma)) >= T)`.
    pub p_exact: f64,
}

pub fn sensitivity_bound(t: u64, c: u64, gamma: f64) -> Result<SensitivityBound, InferenceError> {
    if !(gamma >= 1.0) {
        return Err(InferenceError::InvalidGamma(gamma));
    }
    let nd = t + c;
    if nd == 0 {
        return Err(InferenceError::NoDiscordantPairs);
    }
    let (z, p_plus) = if gamma.is_infinite() {
        // p+ = 1: the bound is 1 unless every discordant pair favours treated
        (if t < nd { f64::NEG_INFINITY } else { 0.0 }, 1.0)
    } else if gamma == 1.0 {
        ((t as f64 - c as f64) / (nd as f64).sqrt(), 0.5)
    } else {
        let p_plus = gamma / (1.0 + gamma);
        let n = nd as f64;
        ((t as f64 - n * p_plus) / (n * p_plus * (1.0 - p_plus)).sqrt(), p_plus)
    };
    Ok(SensitivityBound { gamma, z, p_upper: normal_sf(z), p_exact: binomial_upper_tail(nd, t, p_plus) })
}

pub fn sensitivity_p(t: u64, c: u64, gamma: f64) -> Result<f64, InferenceError> {
    sensitivity_bound(t, c, gamma).map(|b| b.p_upper)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaThreshold {
    pub gamma: f64,
    /// Position on the grid `1 + k * step`.
    pub grid_index: u64,
    /// False when the unadjusted test is already not significant.
    pub significant: bool,
    /// True when no grid point up to the search bound reached `alpha`.
    pub unbounded: bool,
}

/// Smallest grid `Gamma` whose worst-case p-value reaches `alpha`.
pub fn gamma_threshold(t: u64, c: u64, alpha: f64, step: f64) -> Result<GammaThreshold, InferenceError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::InvalidAlpha(alpha));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(InferenceError::InvalidStep(step));
    }
    let at = |k: u64| sensitivity_p(t, c, 1.0 + k as f64 * step);
    let done = |k: u64| -> Result<GammaThreshold, InferenceError> {
        Ok(GammaThreshold { gamma: 1.0 + k as f64 * step, grid_index: k, significant: k > 0, unbounded: false })
    };
    if at(0)? >= alpha {
        return done(0);
    }
    // at(lo) < alpha <= at(hi)
    let mut lo = 0u64;
    let mut hi = 1u64;
    while at(hi)? < alpha {
        lo = hi;
        if hi >= MAX_GRID_INDEX {
            return Ok(GammaThreshold { gamma: f64::INFINITY, grid_index: hi, significant: true, unbounded: true });
        }
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if at(mid)? >= alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    done(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub alpha: f64,
    pub step: f64,
    pub gamma_grid: Vec<f64>,
    pub p_upper: Vec<f64>,
    pub p_exact: Vec<f64>,
    pub threshold: GammaThreshold,
}

/// Threshold plus the bound on the grid from 1 up to `extra` steps past the
/// threshold.
pub fn sensitivity_report(t: u64, c: u64, alpha: f64, step: f64, extra: u64) -> Result<SensitivityReport, InferenceError> {
    let threshold = gamma_threshold(t, c, alpha, step)?;
    let last = if threshold.unbounded { extra } else { threshold.grid_index + extra };
    let bounds = (0..=last)
        .map(|k| sensitivity_bound(t, c, 1.0 + k as f64 * step))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SensitivityReport {
        alpha,
        step,
        gamma_grid: bounds.iter().map(|b| b.gamma).collect(),
        p_upper: bounds.iter().map(|b| b.p_upper).collect(),
        p_exact: bounds.iter().map(|b| b.p_exact).collect(),
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(both: u64, t: u64, c: u64, neither: u64) -> PairTable {
        PairTable { both_event: both, treated_only: t, control_only: c, neither }
    }

    #[test]
    fn symmetric_counts() {
        let r = mcnemar_table(table(3, 10, 10, 5)).unwrap();
        assert_eq!(r.z, 0.0);
        assert!((r.p_one_sided - 0.5).abs() < 1e-15);
        assert_eq!(r.risk_difference, 0.0);
        let g = gamma_threshold(10, 10, 0.05, 0.001).unwrap();
        assert_eq!(g.gamma, 1.0);
        assert!(!g.significant);
    }

    #[test]
    fn no_discordant_pairs() {
        assert!(matches!(mcnemar_table(table(1, 0, 0, 0)), Err(InferenceError::NoDiscordantPairs)));
    }

    #[test]
    fn gamma_one_is_mcnemar() {
        let m = mcnemar_table(table(1078, 2023, 1844, 3748)).unwrap();
        assert_eq!(sensitivity_p(2023, 1844, 1.0).unwrap(), m.p_one_sided);
        assert!(matches!(sensitivity_p(5, 3, 0.9), Err(InferenceError::InvalidGamma(_))));
    }

    #[test]
    fn bound_is_monotone_and_tends_to_one() {
        let mut prev = 0.0;
        for k in 0..300 {
            let p = sensitivity_p(2023, 1844, 1.0 + k as f64 * 0.001).unwrap();
            assert!(p >= prev);
            prev = p;
        }
        assert!(sensitivity_p(30, 20, 1e9).unwrap() > 0.999_999);
        assert_eq!(sensitivity_p(30, 20, f64::INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn table_round_trip() {
        let t = table(2, 3, 1, 4);
        let pairs = PairedOutcomes::from_table(t).unwrap();
        assert_eq!(pairs.n_pairs(), 10);
        assert_eq!(pairs.table(), t);
    }

    #[test]
    fn outcomes_by_id() {
        let outcomes: HashMap<String, f64> = [("a", 1.0), ("b", 0.0), ("c", 2.0)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let ok = PairedOutcomes::from_ids(&[("a".into(), "b".into())], &outcomes).unwrap();
        assert_eq!(ok.pairs, vec![(1, 0)]);
        assert!(matches!(
            PairedOutcomes::from_ids(&[("a".into(), "c".into())], &outcomes),
            Err(InferenceError::NonBinaryOutcome { .. })
        ));
        assert!(matches!(
            PairedOutcomes::from_ids(&[("a".into(), "z".into())], &outcomes),
            Err(InferenceError::MissingOutcome(_))
        ));
    }
}
