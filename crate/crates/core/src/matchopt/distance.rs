//! Rank-based (robust) Mahalanobis distance.
//!
//! Each column is replaced by mid-ranks over the pooled sample. The rank
//! covariance is rescaled so every diagonal entry equals the variance of
//! untied ranks, `(n^2 - 1) / 12`, which keeps heavily tied columns (binary
//! indicators) from dominating. Singular covariances use the pseudo-inverse.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{DataError, DesignView};
use crate::exec::Execution;
use crate::stats::midranks;
use crate::linalg::whitening;

/// Treated-by-control distances, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    /// Row indices of treated units in the source table, in table order.
    pub treated: Vec<usize>,
    /// Row indices of control units in the source table, in table order.
    pub controls: Vec<usize>,
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.controls.len() + c]
    }

    pub fn n_treated(&self) -> usize {
        self.treated.len()
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }
}

/// Whitened rank coordinates: squared Euclidean distance between two rows
/// equals the rank Mahalanobis quadratic form.
pub fn rank_coordinates(columns: &[&[f64]]) -> Vec<Vec<f64>> {
    let k = columns.len();
    let n = columns.first().map_or(0, |c| c.len());
    let ranks: Vec<Vec<f64>> = columns.iter().map(|c| midranks(c)).collect();
    let means: Vec<f64> = ranks.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let mut cov = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let s: f64 = (0..n).map(|i| (ranks[a][i] - means[a]) * (ranks[b][i] - means[b])).sum::<f64>() / n as f64;
            cov[(a, b)] = s;
            cov[(b, a)] = s;
        }
    }
    let untied = (n as f64 * n as f64 - 1.0) / 12.0;
    let scale: Vec<f64> = (0..k).map(|j| if cov[(j, j)] > 0.0 { (untied / cov[(j, j)]).sqrt() } else { 0.0 }).collect();
    let scaled = DMatrix::from_fn(k, k, |a, b| cov[(a, b)] * scale[a] * scale[b]);
    let w = whitening(&scaled);
    (0..n)
        .map(|i| {
            let r = DVector::from_fn(k, |j, _| if scale[j] > 0.0 { ranks[j][i] } else { 0.0 });
            (&w * r).iter().copied().collect()
        })
        .collect()
}

pub fn rank_mahalanobis(analysis: DesignView<'_>, variables: &[&str]) -> Result<DistanceMatrix, DataError> {
    rank_mahalanobis_with(Execution::default(), analysis, variables)
}

/// Distances between every treated and every control unit of `analysis`
/// using the named numeric columns.
pub fn rank_mahalanobis_with(exec: Execution, analysis: DesignView<'_>, variables: &[&str]) -> Result<DistanceMatrix, DataError> {
    let columns: Vec<&[f64]> = variables
        .iter()
        .map(|v| analysis.column(v).map(|c| c.values.as_slice()).ok_or_else(|| DataError::UnknownColumn(v.to_string())))
        .collect::<Result<_, _>>()?;
    let coords = rank_coordinates(&columns);
    let treated = analysis.treated_rows();
    let controls = analysis.control_rows();
    let rows: Vec<Vec<f64>> = exec.map_slice(&treated, |&t| {
        controls
            .iter()
            .map(|&c| coords[t].iter().zip(&coords[c]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect()
    });
    Ok(DistanceMatrix { treated, controls, values: rows.concat() })
}
