//! Per-variable balance and outcome-importance measures.
//!
//! For a covariate `X` the normalized omitted-variable bias is
//!
//! ```text
//! bias = r(X, Y | pilot) * (mean_treated(X) - mean_control(X)) / sd_pilot(X)
//! ```
//!
//! which equals `delta * beta / sd_pilot(Y)` with `delta` the analysis mean
//! difference and `beta = r * sd_pilot(Y) / sd_pilot(X)` the pilot slope.
//! All standard deviations use the n-1 divisor.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{DataError, DesignView, StudyData};
use crate::exec::Execution;
use crate::linalg::least_squares;
use crate::stats::{mean, pearson, sample_sd, sample_variance};

#[derive(Debug, Error)]
pub enum BalanceError {
    #[error("variable `{0}` is constant in the pilot sample")]
    ZeroPilotSd(String),
    #[error("variable `{0}` has zero pooled standard deviation")]
    ZeroPooledSd(String),
    #[error("`{0}` has zero variance in the pilot sample")]
    ZeroVariance(String),
    #[error("regression design for `{0}` is rank deficient")]
    RankDeficient(String),
    #[error("pilot sample contains treated units")]
    PilotHasTreated,
    #[error("score `{name}` has {got} values, expected {expected}")]
    ScoreLength { name: String, expected: usize, got: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowFlag {
    /// Column absent from the pilot (declared non-overlapping).
    NotInPilot,
    ZeroPilotSd,
    /// Variable or outcome constant in the pilot.
    ZeroVariance,
    ZeroPooledSd,
}

impl RowFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            RowFlag::NotInPilot => "not_in_pilot",
            RowFlag::ZeroPilotSd => "zero_pilot_sd",
            RowFlag::ZeroVariance => "zero_variance",
            RowFlag::ZeroPooledSd => "zero_pooled_sd",
        }
    }
}

/// A fitted score evaluated on both samples, so it gets a balance row too.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreColumn {
    pub name: String,
    pub analysis: Vec<f64>,
    pub pilot: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub variable: String,
    pub is_score: bool,
    pub mean_treated: f64,
    pub mean_control: f64,
    pub delta: f64,
    pub pilot_sd: f64,
    pub pilot_outcome_sd: f64,
    pub ovb_smd: f64,
    pub pooled_smd: f64,
    pub pilot_corr: f64,
    pub beta: f64,
    pub bias: f64,
    pub flag: Option<RowFlag>,
}

impl BalanceRow {
    pub fn is_plottable(&self) -> bool {
        self.flag.is_none()
    }
}

fn arm_values(values: &[f64], treatment: &[u8], arm: u8) -> Vec<f64> {
    values.iter().zip(treatment).filter(|(_, &z)| z == arm).map(|(&v, _)| v).collect()
}

fn ensure_controls(pilot: &StudyData) -> Result<(), BalanceError> {
    if pilot.treatment().iter().any(|&z| z == 1) {
        return Err(BalanceError::PilotHasTreated);
    }
    Ok(())
}

fn column_values<'a>(view: &DesignView<'a>, var: &str) -> Result<&'a [f64], BalanceError> {
    view.column(var)
        .map(|c| c.values.as_slice())
        .ok_or_else(|| DataError::UnknownColumn(var.to_string()).into())
}

/// Analysis mean difference over the pilot control standard deviation.
pub fn ovb_smd(var: &str, analysis: DesignView<'_>, pilot: &StudyData) -> Result<f64, BalanceError> {
    ensure_controls(pilot)?;
    let x = column_values(&analysis, var)?;
    let px = column_values(&pilot.design(), var)?;
    let sd = sample_sd(px);
    if !(sd > 0.0) {
        return Err(BalanceError::ZeroPilotSd(var.to_string()));
    }
    let z = analysis.treatment();
    Ok((mean(&arm_values(x, z, 1)) - mean(&arm_values(x, z, 0))) / sd)
}

fn pooled_sd(treated: &[f64], control: &[f64]) -> f64 {
    ((sample_variance(treated) + sample_variance(control)) / 2.0).sqrt()
}

/// Standardized mean difference with the equal-weight pooled SD.
pub fn pooled_smd(var: &str, analysis: DesignView<'_>) -> Result<f64, BalanceError> {
    let x = column_values(&analysis, var)?;
    let z = analysis.treatment();
    let (t, c) = (arm_values(x, z, 1), arm_values(x, z, 0));
    let sd = pooled_sd(&t, &c);
    if !(sd > 0.0) {
        return Err(BalanceError::ZeroPooledSd(var.to_string()));
    }
    Ok((mean(&t) - mean(&c)) / sd)
}

/// Pearson correlation of a pilot column with the pilot outcome. Covers the
/// phi and point-biserial cases with the same formula.
pub fn pilot_corr(var: &str, pilot: &StudyData) -> Result<f64, BalanceError> {
    ensure_controls(pilot)?;
    let x = column_values(&pilot.design(), var)?;
    let y = pilot.outcome().ok_or(DataError::NoOutcome)?;
    if sample_sd(y).partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(BalanceError::ZeroVariance("outcome".into()));
    }
    pearson(x, y).ok_or_else(|| BalanceError::ZeroVariance(var.to_string()))
}

fn row_for(name: &str, is_score: bool, x: &[f64], z: &[u8], px: Option<&[f64]>, py: &[f64]) -> BalanceRow {
    let t = arm_values(x, z, 1);
    let c = arm_values(x, z, 0);
    let (mt, mc) = (mean(&t), mean(&c));
    let delta = mt - mc;
    let psd = pooled_sd(&t, &c);
    let pooled = if psd > 0.0 { delta / psd } else { f64::NAN };
    let sy = sample_sd(py);
    let mut row = BalanceRow {
        variable: name.to_string(),
        is_score,
        mean_treated: mt,
        mean_control: mc,
        delta,
        pilot_sd: f64::NAN,
        pilot_outcome_sd: sy,
        ovb_smd: f64::NAN,
        pooled_smd: pooled,
        pilot_corr: f64::NAN,
        beta: f64::NAN,
        bias: f64::NAN,
        flag: None,
    };
    let Some(px) = px else {
        row.flag = Some(RowFlag::NotInPilot);
        return row;
    };
    let sx = sample_sd(px);
    row.pilot_sd = sx;
    if !(sx > 0.0) {
        row.flag = Some(RowFlag::ZeroPilotSd);
        return row;
    }
    row.ovb_smd = delta / sx;
    match pearson(px, py) {
        Some(r) if sy > 0.0 => {
            row.pilot_corr = r;
            row.beta = r * sy / sx;
            row.bias = r * row.ovb_smd;
        }
        _ => row.flag = Some(RowFlag::ZeroVariance),
    }
    if row.flag.is_none() && pooled.is_nan() {
        row.flag = Some(RowFlag::ZeroPooledSd);
    }
    row
}

/// Deterministic report order: |bias| descending, then name; rows with an
/// undefined bias go last.
pub fn sort_rows(rows: &mut [BalanceRow]) {
    rows.sort_by(|a, b| {
        let ka = if a.bias.is_nan() { f64::NEG_INFINITY } else { a.bias.abs() };
        let kb = if b.bias.is_nan() { f64::NEG_INFINITY } else { b.bias.abs() };
        kb.total_cmp(&ka).then_with(|| a.variable.cmp(&b.variable))
    });
}

pub fn bias_table(analysis: DesignView<'_>, pilot: &StudyData, extra_scores: &[ScoreColumn]) -> Result<Vec<BalanceRow>, BalanceError> {
    bias_table_with(Execution::default(), analysis, pilot, extra_scores)
}

/// One row per covariate column and per extra score, sorted by [`sort_rows`].
/// Degenerate variables are flagged rather than failing the table.
pub fn bias_table_with(
    exec: Execution,
    analysis: DesignView<'_>,
    pilot: &StudyData,
    extra_scores: &[ScoreColumn],
) -> Result<Vec<BalanceRow>, BalanceError> {
    ensure_controls(pilot)?;
    let py = pilot.outcome().ok_or(DataError::NoOutcome)?;
    for s in extra_scores {
        if s.analysis.len() != analysis.n() {
            return Err(BalanceError::ScoreLength { name: s.name.clone(), expected: analysis.n(), got: s.analysis.len() });
        }
        if s.pilot.len() != pilot.n() {
            return Err(BalanceError::ScoreLength { name: s.name.clone(), expected: pilot.n(), got: s.pilot.len() });
        }
    }
    let z = analysis.treatment();
    let cols = analysis.columns();
    let mut rows = exec.map_range(cols.len() + extra_scores.len(), |i| {
        if i < cols.len() {
            let c = &cols[i];
            let px = pilot.column(&c.name).map(|pc| pc.values.as_slice());
            row_for(&c.name, false, &c.values, z, px, py)
        } else {
            let s = &extra_scores[i - cols.len()];
            row_for(&s.name, true, &s.analysis, z, Some(&s.pilot), py)
        }
    });
    sort_rows(&mut rows);
    Ok(rows)
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v}")
    }
}

pub fn write_bias_csv<W: Write>(rows: &[BalanceRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["variable", "mean_treated", "mean_control", "ovb_smd", "pooled_smd", "pilot_corr", "bias", "flag"])?;
    for r in rows {
        w.write_record([
            r.variable.clone(),
            fmt_num(r.mean_treated),
            fmt_num(r.mean_control),
            fmt_num(r.ovb_smd),
            fmt_num(r.pooled_smd),
            fmt_num(r.pilot_corr),
            fmt_num(r.bias),
            r.flag.map(RowFlag::as_str).unwrap_or("").to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pre- and post-match rows for one variable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrePostRow {
    pub variable: String,
    pub pre: BalanceRow,
    pub post: BalanceRow,
}

/// Pairs `pre` with `post` rows by variable name, in `pre` order.
pub fn pair_rows(pre: &[BalanceRow], post: &[BalanceRow]) -> Vec<PrePostRow> {
    pre.iter()
        .filter_map(|p| {
            post.iter().find(|q| q.variable == p.variable).map(|q| PrePostRow {
                variable: p.variable.clone(),
                pre: p.clone(),
                post: q.clone(),
            })
        })
        .collect()
}

pub fn write_prepost_csv<W: Write>(rows: &[PrePostRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "variable",
        "pilot_corr",
        "pre_ovb_smd",
        "post_ovb_smd",
        "pre_bias",
        "post_bias",
        "pre_bias_rounded",
        "post_bias_rounded",
        "flag",
    ])?;
    for r in rows {
        w.write_record([
            r.variable.clone(),
            fmt_num(r.pre.pilot_corr),
            fmt_num(r.pre.ovb_smd),
            fmt_num(r.post.ovb_smd),
            fmt_num(r.pre.bias),
            fmt_num(r.post.bias),
            round3(r.pre.bias),
            round3(r.post.bias),
            r.pre.flag.or(r.post.flag).map(RowFlag::as_str).unwrap_or("").to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Presentation rounding to three decimals.
pub fn round3(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        // avoid "-0.000"
        let r = (v * 1000.0).round() / 1000.0;
        format!("{:.3}", if r == 0.0 { 0.0 } else { r })
    }
}

/// Coefficients of the three same-sample regressions
/// `Y ~ Z + X`, `Y ~ Z` and `X ~ Z` (each with an intercept).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CochranDecomposition {
    /// Coefficient on Z in `Y ~ Z`.
    pub tau: f64,
    /// Coefficient on Z in `Y ~ Z + X`.
    pub tau0: f64,
    /// Coefficient on Z in `X ~ Z`.
    pub delta: f64,
    /// Coefficient on X in `Y ~ Z + X`.
    pub beta: f64,
    /// Residual norms of the full, short and auxiliary regressions.
    pub residual_norms: (f64, f64, f64),
}

impl CochranDecomposition {
    pub fn identity_residual(&self) -> f64 {
        (self.tau - self.tau0 - self.delta * self.beta).abs()
    }
}

pub fn cochran_decompose(var: &str, data: &StudyData) -> Result<CochranDecomposition, BalanceError> {
    let x = data.column(var).ok_or_else(|| DataError::UnknownColumn(var.to_string()))?;
    let y = DVector::from_column_slice(data.outcome().ok_or(DataError::NoOutcome)?);
    let n = data.n();
    let z: Vec<f64> = data.treatment().iter().map(|&t| f64::from(t)).collect();
    let xv = DVector::from_column_slice(&x.values);
    let short = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { z[i] });
    let full = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => z[i],
        _ => x.values[i],
    });
    let deficient = || BalanceError::RankDeficient(var.to_string());
    let b_full = least_squares(&full, &y).ok_or_else(deficient)?;
    let b_short = least_squares(&short, &y).ok_or_else(deficient)?;
    let b_aux = least_squares(&short, &xv).ok_or_else(deficient)?;
    let norms = (
        (&y - &full * &b_full).norm(),
        (&y - &short * &b_short).norm(),
        (&xv - &short * &b_aux).norm(),
    );
    Ok(CochranDecomposition { tau: b_short[1], tau0: b_full[1], delta: b_aux[1], beta: b_full[2], residual_norms: norms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Role, VariableSpec};

    fn table(x: &[f64], z: &[u8], y: Option<&[f64]>) -> StudyData {
        StudyData::from_parts(
            vec![VariableSpec::continuous("x")],
            vec![x.to_vec()],
            z.to_vec(),
            y.map(<[f64]>::to_vec),
            (0..x.len()).map(|i| format!("u{i}")).collect(),
            Role::Analysis,
        )
        .unwrap()
    }

    #[test]
    fn ovb_smd_direct_substitution() {
        // treated mean 2, control mean 1; pilot values with sd 2
        let a = table(&[1.0, 3.0, 0.0, 2.0], &[1, 1, 0, 0], None);
        let p = table(&[-1.0, 1.0, 3.0], &[0, 0, 0], Some(&[0.0, 1.0, 1.0]));
        assert_eq!(sample_sd(&[-1.0, 1.0, 3.0]), 2.0);
        assert!((ovb_smd("x", a.design(), &p).unwrap() - 0.5).abs() < 1e-15);
        let flat = table(&[1.0, 1.0, 1.0, 1.0], &[1, 1, 0, 0], None);
        assert_eq!(ovb_smd("x", flat.design(), &p).unwrap(), 0.0);
    }

    #[test]
    fn ovb_smd_rejects_constant_pilot() {
        let a = table(&[1.0, 3.0, 0.0, 2.0], &[1, 1, 0, 0], None);
        let p = table(&[2.0, 2.0, 2.0], &[0, 0, 0], Some(&[0.0, 1.0, 1.0]));
        assert!(matches!(ovb_smd("x", a.design(), &p), Err(BalanceError::ZeroPilotSd(_))));
    }

    #[test]
    fn pooled_smd_collapses_with_equal_sds() {
        let a = table(&[3.0, 5.0, 0.0, 2.0], &[1, 1, 0, 0], None);
        // both arms have sd sqrt(2)
        let expected = (4.0 - 1.0) / 2f64.sqrt();
        assert!((pooled_smd("x", a.design()).unwrap() - expected).abs() < 1e-14);
        let same = table(&[1.0, 2.0, 1.0, 2.0], &[1, 1, 0, 0], None);
        assert_eq!(pooled_smd("x", same.design()).unwrap(), 0.0);
    }

    #[test]
    fn phi_coefficient_matches_table_formula() {
        // 2x2 counts a=30 (x1,y1), b=10 (x1,y0), c=10 (x0,y1), d=30 (x0,y0)
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (xv, yv, k) in [(1.0, 1.0, 30), (1.0, 0.0, 10), (0.0, 1.0, 10), (0.0, 0.0, 30)] {
            for _ in 0..k {
                x.push(xv);
                y.push(yv);
            }
        }
        let (a, b, c, d) = (30.0f64, 10.0f64, 10.0f64, 30.0f64);
        let phi = (a * d - b * c) / ((a + b) * (c + d) * (a + c) * (b + d)).sqrt();
        let p = table(&x, &vec![0; x.len()], Some(&y));
        let r = pilot_corr("x", &p).unwrap();
        assert!((r - phi).abs() < 1e-14);
        assert!((r - 0.5).abs() < 1e-14);
    }

    #[test]
    fn self_correlation_signs() {
        let x = [1.0, 4.0, 2.0, 8.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pilot_corr("x", &table(&x, &[0; 4], Some(&x))).unwrap() - 1.0).abs() < 1e-15);
        assert!((pilot_corr("x", &table(&x, &[0; 4], Some(&neg))).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_outcome_is_zero_variance() {
        let p = table(&[1.0, 2.0, 3.0], &[0, 0, 0], Some(&[1.0, 1.0, 1.0]));
        assert!(matches!(pilot_corr("x", &p), Err(BalanceError::ZeroVariance(_))));
    }

    #[test]
    fn product_row_and_flags() {
        let a = table(&[1.0, 3.0, 0.0, 2.0], &[1, 1, 0, 0], None);
        let p = table(&[-1.0, 1.0, 3.0, 5.0], &[0; 4], Some(&[0.0, 1.0, 0.0, 1.0]));
        let rows = bias_table(a.design(), &p, &[]).unwrap();
        let r = &rows[0];
        assert!((r.bias - r.pilot_corr * r.ovb_smd).abs() <= 1e-12 * r.bias.abs());
        assert!((r.beta * r.delta / r.pilot_outcome_sd - r.bias).abs() < 1e-12);

        let flat_pilot = table(&[1.0, 1.0, 1.0, 1.0], &[0; 4], Some(&[0.0, 1.0, 0.0, 1.0]));
        let rows = bias_table(a.design(), &flat_pilot, &[]).unwrap();
        assert_eq!(rows[0].flag, Some(RowFlag::ZeroPilotSd));
        assert!(rows[0].bias.is_nan());
        assert!(!rows[0].is_plottable());
    }

    #[test]
    fn flagged_and_missing_columns_sort_last() {
        let a = StudyData::from_parts(
            vec![VariableSpec::continuous("a"), VariableSpec::continuous("year"), VariableSpec::continuous("b")],
            vec![vec![1.0, 3.0, 0.0, 2.0], vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 1.0, 0.0, 2.0]],
            vec![1, 1, 0, 0],
            None,
            (0..4).map(|i| i.to_string()).collect(),
            Role::Analysis,
        )
        .unwrap();
        let p = StudyData::from_parts(
            vec![VariableSpec::continuous("a"), VariableSpec::continuous("b")],
            vec![vec![1.0, 2.0, 0.0, 2.0], vec![4.0, 1.0, 3.0, 2.0]],
            vec![0; 4],
            Some(vec![1.0, 1.0, 0.0, 0.0]),
            (10..14).map(|i| i.to_string()).collect(),
            Role::Pilot,
        )
        .unwrap();
        let rows = bias_table(a.design(), &p, &[]).unwrap();
        assert_eq!(rows.last().unwrap().variable, "year");
        assert_eq!(rows.last().unwrap().flag, Some(RowFlag::NotInPilot));
        assert!(rows[0].bias.abs() >= rows[1].bias.abs());
    }

    #[test]
    fn cochran_simple_cases() {
        // X balanced across arms: delta = 0 so tau == tau0
        let x = [1.0, -1.0, 2.0, -2.0, 1.0, -1.0];
        let z = [1, 1, 1, 0, 0, 0];
        let xs = [1.0, -1.0, 0.0, -2.0, 2.0, 0.0];
        let y = [1.0, 0.0, 2.0, 1.0, 0.5, 0.3];
        let d = table(&xs, &z, Some(&y));
        let c = cochran_decompose("x", &d).unwrap();
        assert!(c.delta.abs() < 1e-12);
        assert!((c.tau - c.tau0).abs() < 1e-12);

        let y2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let d = table(&x, &z, Some(&y2));
        let c = cochran_decompose("x", &d).unwrap();
        assert!((c.beta - 2.0).abs() < 1e-12);
        assert!(c.residual_norms.0 < 1e-12);
    }

    #[test]
    fn cochran_rejects_constant_treatment() {
        let d = table(&[1.0, 2.0, 3.0], &[0, 0, 0], Some(&[1.0, 0.0, 1.0]));
        assert!(matches!(cochran_decompose("x", &d), Err(BalanceError::RankDeficient(_))));
    }

    #[test]
    fn round3_presentation() {
        assert_eq!(round3(0.0104), "0.010");
        assert_eq!(round3(-0.0004), "0.000");
        assert_eq!(round3(f64::NAN), "NA");
    }
}
