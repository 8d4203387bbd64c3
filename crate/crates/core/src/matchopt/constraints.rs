//! Exact-match blocks, caliper masks and tier cross-classifications.

use std::collections::HashMap;

use crate::dataset::{DataError, DesignView};
use crate::stats::sample_sd;

use super::distance::DistanceMatrix;
use super::{MatchError, MatchSpec};

/// Cross-classification of the first `level` tiers.
#[derive(Debug, Clone, PartialEq)]
pub struct TierLevel {
    /// Dense key id per treated unit.
    pub treated: Vec<u32>,
    /// Dense key id per control unit.
    pub controls: Vec<u32>,
    /// Key id at the previous level for every key at this level.
    pub parent: Vec<u32>,
}

impl TierLevel {
    pub fn n_keys(&self) -> usize {
        self.parent.len()
    }
}

/// A fully specified matching instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchProblem {
    pub treated_ids: Vec<String>,
    pub control_ids: Vec<String>,
    /// Row-major `n_treated x n_controls`.
    pub distance: Vec<f64>,
    pub admissible: Vec<bool>,
    pub treated_block: Vec<usize>,
    pub control_block: Vec<usize>,
    pub block_keys: Vec<String>,
    pub tiers: Vec<TierLevel>,
    pub caliper: Option<f64>,
}

impl MatchProblem {
    pub fn n_treated(&self) -> usize {
        self.treated_ids.len()
    }

    pub fn n_controls(&self) -> usize {
        self.control_ids.len()
    }

    pub fn is_admissible(&self, t: usize, c: usize) -> bool {
        self.admissible[t * self.n_controls() + c]
    }

    pub fn distance(&self, t: usize, c: usize) -> f64 {
        self.distance[t * self.n_controls() + c]
    }

    pub fn n_admissible(&self) -> usize {
        self.admissible.iter().filter(|&&a| a).count()
    }

    /// Treated units with no admissible control at all.
    pub fn hopeless_treated(&self) -> Vec<usize> {
        (0..self.n_treated()).filter(|&t| (0..self.n_controls()).all(|c| !self.is_admissible(t, c))).collect()
    }
}

fn block_label(view: &DesignView<'_>, var: &str, row: usize) -> Result<String, DataError> {
    match view.nominal(var) {
        Ok(nom) => Ok(format!("{var}={}", nom.levels[nom.codes[row] as usize])),
        Err(DataError::NotNominal(_)) => Ok(format!("{var}={}", view.column(var).expect("numeric column").values[row])),
        Err(e) => Err(e),
    }
}

/// Masks pairs that break exact equality or the caliper, partitions units
/// into exact-match blocks, and encodes the tier cross-classifications.
///
/// The caliper is `caliper_width_sd` times the sample SD of the caliper
/// score over the whole table behind `view`.
pub fn apply_constraints(dist: &DistanceMatrix, spec: &MatchSpec, view: DesignView<'_>) -> Result<MatchProblem, MatchError> {
    spec.validate()?;
    let ids = view.unit_ids();
    let (nt, nc) = (dist.n_treated(), dist.n_controls());

    let mut block_index: HashMap<String, usize> = HashMap::new();
    let mut block_keys = Vec::new();
    let mut block_of = |row: usize| -> Result<usize, MatchError> {
        let key = if spec.exact.is_empty() {
            "all".to_string()
        } else {
            spec.exact.iter().map(|v| block_label(&view, v, row)).collect::<Result<Vec<_>, _>>()?.join("|")
        };
        let next = block_keys.len();
        let id = *block_index.entry(key.clone()).or_insert(next);
        if id == next {
            block_keys.push(key);
        }
        Ok(id)
    };
    let treated_block: Vec<usize> = dist.treated.iter().map(|&r| block_of(r)).collect::<Result<_, _>>()?;
    let control_block: Vec<usize> = dist.controls.iter().map(|&r| block_of(r)).collect::<Result<_, _>>()?;

    let caliper = match &spec.caliper_variable {
        Some(name) => {
            let col = view.column(name).ok_or_else(|| DataError::UnknownColumn(name.clone()))?;
            let sd = sample_sd(&col.values);
            let width = spec.caliper_width_sd * if sd.is_finite() { sd } else { 0.0 };
            Some((col, width))
        }
        None => None,
    };

    let mut admissible = vec![false; nt * nc];
    for t in 0..nt {
        for c in 0..nc {
            let mut ok = treated_block[t] == control_block[c];
            if let (true, Some((col, width))) = (ok, caliper) {
                ok = (col.values[dist.treated[t]] - col.values[dist.controls[c]]).abs() <= width;
            }
            admissible[t * nc + c] = ok;
        }
    }

    let mut tiers = Vec::with_capacity(spec.tiers.len());
    let mut prefix: Vec<Vec<u32>> = vec![Vec::new(); view.n()];
    let mut parent_ids: Vec<u32> = vec![0; view.n()];
    for tier in &spec.tiers {
        let mut noms = Vec::with_capacity(tier.len());
        for var in tier {
            noms.push(view.nominal(var).map_err(|e| match e {
                DataError::NotNominal(v) => MatchError::ContinuousTierVariable(v),
                other => MatchError::Data(other),
            })?);
        }
        for (row, key) in prefix.iter_mut().enumerate() {
            key.extend(noms.iter().map(|n| n.codes[row]));
        }
        let mut index: HashMap<&[u32], u32> = HashMap::new();
        let mut parent = Vec::new();
        let mut unit_key = vec![0u32; view.n()];
        // only matched-eligible rows appear in the network, but keys are
        // assigned in table order so ids are stable
        for row in dist.treated.iter().chain(&dist.controls) {
            let next = parent.len() as u32;
            let id = *index.entry(prefix[*row].as_slice()).or_insert(next);
            if id == next {
                parent.push(parent_ids[*row]);
            }
            unit_key[*row] = id;
        }
        tiers.push(TierLevel {
            treated: dist.treated.iter().map(|&r| unit_key[r]).collect(),
            controls: dist.controls.iter().map(|&r| unit_key[r]).collect(),
            parent,
        });
        parent_ids = unit_key;
    }

    Ok(MatchProblem {
        treated_ids: dist.treated.iter().map(|&r| ids[r].clone()).collect(),
        control_ids: dist.controls.iter().map(|&r| ids[r].clone()).collect(),
        distance: dist.values.clone(),
        admissible,
        treated_block,
        control_block,
        block_keys,
        tiers,
        caliper: caliper.map(|(_, w)| w),
    })
}
