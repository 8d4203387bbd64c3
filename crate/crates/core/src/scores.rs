//! L1-penalized propensity and prognostic score models.
//!
//! The objective is `(1/n) * loss(y, b0 + X b) + lambda * |b|_1` over
//! internally standardized columns (mean 0, population sd 1) with an
//! unpenalized intercept. The squared-error loss carries a factor 1/2, the
//! logistic loss is the negative log-likelihood, approximated by iteratively
//! reweighted quadratics with step halving so the penalized likelihood never
//! increases between outer iterations.

use rand::seq::SliceRandom;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{DataError, DesignView, StudyData};
use crate::exec::Execution;
use crate::rng::{derive_seed, seeded};
use crate::stats::{mean, quantile_type7};

pub const TOLERANCE: f64 = 1e-7;
pub const MAX_SWEEPS: usize = 10_000;
pub const PATH_LENGTH: usize = 50;
pub const PATH_RATIO: f64 = 1e-3;
const MAX_REFOLDS: u64 = 5;
const MIN_WEIGHT: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("design has no rows or no columns")]
    EmptyDesign,
    #[error("`{0}` has zero variance")]
    ZeroVariance(String),
    #[error("lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("fold count {folds} outside [2, {n}]")]
    InvalidFolds { folds: usize, n: usize },
    #[error("every fold assignment left a single-class training fold after {0} attempts")]
    DegenerateFold(u64),
    #[error("all scores are tied")]
    AllTied,
    #[error("quantile count must be at least 2, got {0}")]
    InvalidBinCount(usize),
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("response length {got} does not match {expected} rows")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Propensity,
    Prognostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingRole {
    AnalysisAll,
    PilotControls,
}

/// Per-column centering and scaling used before fitting. A zero `sd` marks a
/// constant column that was dropped from the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub sweeps: usize,
    pub converged: bool,
    /// Penalized objective after each sweep (linear) or accepted outer
    /// iteration (logistic).
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

/// Result of one penalized fit, on the standardized scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LassoFit {
    pub family: Family,
    pub lambda: f64,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub standardization: Vec<Standardization>,
    pub diagnostics: FitDiagnostics,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Standardized design, column-major.
struct Design {
    n: usize,
    cols: Vec<Vec<f64>>,
    std: Vec<Standardization>,
    active: Vec<bool>,
}

impl Design {
    fn new(columns: &[&[f64]]) -> Result<Self, ScoreError> {
        let n = columns.first().map_or(0, |c| c.len());
        if n == 0 || columns.is_empty() {
            return Err(ScoreError::EmptyDesign);
        }
        let mut cols = Vec::with_capacity(columns.len());
        let mut std = Vec::with_capacity(columns.len());
        let mut active = Vec::with_capacity(columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != n {
                return Err(ScoreError::LengthMismatch { expected: n, got: c.len() });
            }
            let m = mean(c);
            let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
            if sd > 1e-12 * m.abs().max(1.0) {
                cols.push(c.iter().map(|v| (v - m) / sd).collect());
                std.push(Standardization { mean: m, sd });
                active.push(true);
            } else {
                log::warn!("column {j} is constant and is dropped from the fit");
                cols.push(vec![0.0; n]);
                std.push(Standardization { mean: m, sd: 0.0 });
                active.push(false);
            }
        }
        Ok(Self { n, cols, std, active })
    }

    fn linear_predictor(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![b0; self.n];
        for (j, c) in self.cols.iter().enumerate() {
            if beta[j] != 0.0 {
                for (e, x) in eta.iter_mut().zip(c) {
                    *e += beta[j] * x;
                }
            }
        }
        eta
    }

    /// Largest lambda with a non-trivial solution.
    fn lambda_max(&self, y: &[f64]) -> f64 {
        let ybar = mean(y);
        self.cols
            .iter()
            .map(|c| c.iter().zip(y).map(|(x, yi)| x * (yi - ybar)).sum::<f64>().abs() / self.n as f64)
            .fold(0.0, f64::max)
    }
}

fn l1(beta: &[f64]) -> f64 {
    beta.iter().map(|b| b.abs()).sum()
}

fn logistic_objective(y: &[f64], eta: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let nll: f64 = y.iter().zip(eta).map(|(yi, e)| log1p_exp(*e) - yi * e).sum();
    nll / n + lambda * l1(beta)
}

fn fit_linear(d: &Design, y: &[f64], lambda: f64, warm: Option<&[f64]>) -> LassoFit {
    let n = d.n as f64;
    let ybar = mean(y);
    let mut beta = warm.map_or_else(|| vec![0.0; d.cols.len()], <[f64]>::to_vec);
    let mut resid: Vec<f64> = {
        let eta = d.linear_predictor(ybar, &beta);
        y.iter().zip(&eta).map(|(yi, e)| yi - e).collect()
    };
    let objective = |r: &[f64], b: &[f64]| r.iter().map(|v| v * v).sum::<f64>() / (2.0 * n) + lambda * l1(b);
    let mut trace = vec![objective(&resid, &beta)];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..d.cols.len() {
            if !d.active[j] {
                continue;
            }
            let x = &d.cols[j];
            let g = x.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() / n + beta[j];
            let new = soft_threshold(g, lambda);
            let diff = new - beta[j];
            if diff != 0.0 {
                for (r, xi) in resid.iter_mut().zip(x) {
                    *r -= diff * xi;
                }
                beta[j] = new;
                max_change = max_change.max(diff.abs());
            }
        }
        trace.push(objective(&resid, &beta));
        if max_change < TOLERANCE {
            converged = true;
            break;
        }
    }
    LassoFit {
        family: Family::Linear,
        lambda,
        intercept: ybar,
        coefficients: beta,
        standardization: d.std.clone(),
        diagnostics: FitDiagnostics { sweeps, converged, objective_trace: trace },
    }
}

fn fit_logistic(d: &Design, y: &[f64], lambda: f64, warm: Option<(f64, &[f64])>) -> LassoFit {
    let n = d.n as f64;
    let (mut b0, mut beta) = match warm {
        Some((b, w)) => (b, w.to_vec()),
        None => {
            let p = mean(y).clamp(1e-6, 1.0 - 1e-6);
            ((p / (1.0 - p)).ln(), vec![0.0; d.cols.len()])
        }
    };
    let mut eta = d.linear_predictor(b0, &beta);
    let mut obj = logistic_objective(y, &eta, &beta, lambda);
    let mut trace = vec![obj];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < MAX_SWEEPS {
        let p: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let w: Vec<f64> = p.iter().map(|&pi| (pi * (1.0 - pi)).max(MIN_WEIGHT)).collect();
        let sum_w: f64 = w.iter().sum();
        // working residual r = z - eta with z the IRLS working response
        let mut r: Vec<f64> = (0..d.n).map(|i| (y[i] - p[i]) / w[i]).collect();
        let xwx: Vec<f64> = d.cols.iter().map(|c| c.iter().zip(&w).map(|(x, wi)| wi * x * x).sum::<f64>() / n).collect();
        let (old_b0, old_beta) = (b0, beta.clone());
        let (mut nb0, mut nbeta) = (b0, beta.clone());
        loop {
            sweeps += 1;
            let mut max_change = 0.0f64;
            for j in 0..d.cols.len() {
                if !d.active[j] || xwx[j] <= 0.0 {
                    continue;
                }
                let x = &d.cols[j];
                let g: f64 = x.iter().zip(&r).zip(&w).map(|((xi, ri), wi)| wi * xi * ri).sum::<f64>() / n + xwx[j] * nbeta[j];
                let new = soft_threshold(g, lambda) / xwx[j];
                let diff = new - nbeta[j];
                if diff != 0.0 {
                    for (ri, xi) in r.iter_mut().zip(x) {
                        *ri -= diff * xi;
                    }
                    nbeta[j] = new;
                    max_change = max_change.max(diff.abs());
                }
            }
            let shift = r.iter().zip(&w).map(|(ri, wi)| ri * wi).sum::<f64>() / sum_w;
            if shift != 0.0 {
                r.iter_mut().for_each(|ri| *ri -= shift);
                nb0 += shift;
                max_change = max_change.max(shift.abs());
            }
            if max_change < TOLERANCE || sweeps >= MAX_SWEEPS {
                break;
            }
        }
        // step halving keeps the penalized likelihood non-increasing
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cb0 = old_b0 + step * (nb0 - old_b0);
            let cbeta: Vec<f64> = old_beta.iter().zip(&nbeta).map(|(o, nw)| o + step * (nw - o)).collect();
            let ceta = d.linear_predictor(cb0, &cbeta);
            let cobj = logistic_objective(y, &ceta, &cbeta, lambda);
            if cobj <= obj + 1e-12 * obj.abs().max(1.0) {
                accepted = Some((cb0, cbeta, ceta, cobj));
                break;
            }
            step /= 2.0;
        }
        let Some((cb0, cbeta, ceta, cobj)) = accepted else {
            converged = true;
            break;
        };
        let change = cbeta
            .iter()
            .zip(&old_beta)
            .map(|(a, b)| (a - b).abs())
            .fold((cb0 - old_b0).abs(), f64::max);
        b0 = cb0;
        beta = cbeta;
        eta = ceta;
        obj = cobj;
        trace.push(obj);
        if change < TOLERANCE {
            converged = true;
            break;
        }
    }
    LassoFit {
        family: Family::Logistic,
        lambda,
        intercept: b0,
        coefficients: beta,
        standardization: d.std.clone(),
        diagnostics: FitDiagnostics { sweeps, converged, objective_trace: trace },
    }
}

fn fit_on_design(d: &Design, y: &[f64], family: Family, lambda: f64, warm: Option<&LassoFit>) -> LassoFit {
    let fit = match family {
        Family::Linear => fit_linear(d, y, lambda, warm.map(|w| w.coefficients.as_slice())),
        Family::Logistic => fit_logistic(d, y, lambda, warm.map(|w| (w.intercept, w.coefficients.as_slice()))),
    };
    if !fit.diagnostics.converged {
        log::warn!("lasso fit (lambda = {lambda}) did not converge in {MAX_SWEEPS} sweeps");
    }
    fit
}

/// Fits one penalized model by cyclic coordinate descent.
///
/// Non-convergence is reported through `diagnostics.converged` with the
/// last iterate returned.
pub fn fit_lasso(columns: &[&[f64]], y: &[f64], family: Family, lambda: f64) -> Result<LassoFit, ScoreError> {
    if !(lambda >= 0.0) || lambda.is_nan() {
        return Err(ScoreError::InvalidLambda(lambda));
    }
    let d = Design::new(columns)?;
    if y.len() != d.n {
        return Err(ScoreError::LengthMismatch { expected: d.n, got: y.len() });
    }
    // an infinite penalty is the same as lambda_max
    let lambda = if lambda.is_infinite() { d.lambda_max(y) } else { lambda };
    Ok(fit_on_design(&d, y, family, lambda, None))
}

impl LassoFit {
    /// Linear predictor for raw (unstandardized) columns.
    pub fn linear_predictor(&self, columns: &[&[f64]]) -> Vec<f64> {
        let n = columns.first().map_or(0, |c| c.len());
        let mut eta = vec![self.intercept; n];
        for (j, c) in columns.iter().enumerate() {
            let s = self.standardization[j];
            let b = self.coefficients[j];
            if b != 0.0 && s.sd > 0.0 {
                for (e, v) in eta.iter_mut().zip(c.iter()) {
                    *e += b * (v - s.mean) / s.sd;
                }
            }
        }
        eta
    }

    /// Predictions on the response scale (probabilities for logistic).
    pub fn predict(&self, columns: &[&[f64]]) -> Vec<f64> {
        let eta = self.linear_predictor(columns);
        match self.family {
            Family::Linear => eta,
            Family::Logistic => eta.into_iter().map(sigmoid).collect(),
        }
    }

    /// Intercept and coefficients on the original column scale.
    pub fn original_scale(&self) -> (f64, Vec<f64>) {
        let mut b0 = self.intercept;
        let coefs = self
            .coefficients
            .iter()
            .zip(&self.standardization)
            .map(|(b, s)| {
                if s.sd > 0.0 {
                    b0 -= b * s.mean / s.sd;
                    b / s.sd
                } else {
                    0.0
                }
            })
            .collect();
        (b0, coefs)
    }

    /// Largest violation of the lasso optimality conditions on the
    /// standardized scale (intercept stationarity included).
    pub fn kkt_residual(&self, columns: &[&[f64]], y: &[f64]) -> f64 {
        let n = y.len() as f64;
        let mu = self.predict(columns);
        let resid: Vec<f64> = y.iter().zip(&mu).map(|(a, b)| a - b).collect();
        let mut worst = (resid.iter().sum::<f64>() / n).abs();
        for (j, c) in columns.iter().enumerate() {
            let s = self.standardization[j];
            if s.sd == 0.0 {
                continue;
            }
            let g = -c.iter().zip(&resid).map(|(v, r)| (v - s.mean) / s.sd * r).sum::<f64>() / n;
            let b = self.coefficients[j];
            let v = if b != 0.0 { (g + self.lambda * b.signum()).abs() } else { (g.abs() - self.lambda).max(0.0) };
            worst = worst.max(v);
        }
        worst
    }
}

fn deviance(family: Family, y: &[f64], mu: &[f64]) -> f64 {
    match family {
        Family::Linear => y.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum(),
        Family::Logistic => -2.0
            * y.iter()
                .zip(mu)
                .map(|(&yi, &p)| {
                    let p = p.clamp(1e-15, 1.0 - 1e-15);
                    yi * p.ln() + (1.0 - yi) * (1.0 - p).ln()
                })
                .sum::<f64>(),
    }
}

/// Fitted path with warm starts, one fit per lambda in the given order.
pub fn fit_path(columns: &[&[f64]], y: &[f64], family: Family, lambdas: &[f64]) -> Result<Vec<LassoFit>, ScoreError> {
    let d = Design::new(columns)?;
    let mut out: Vec<LassoFit> = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let fit = fit_on_design(&d, y, family, l, out.last());
        out.push(fit);
    }
    Ok(out)
}

/// Penalty grid: `PATH_LENGTH` log-spaced values from `lambda_max` down to
/// `PATH_RATIO * lambda_max`.
pub fn lambda_path(columns: &[&[f64]], y: &[f64]) -> Result<Vec<f64>, ScoreError> {
    let lmax = Design::new(columns)?.lambda_max(y);
    if lmax == 0.0 {
        return Ok(vec![0.0]);
    }
    let step = PATH_RATIO.ln() / (PATH_LENGTH - 1) as f64;
    Ok((0..PATH_LENGTH).map(|i| lmax * (step * i as f64).exp()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub lambda: f64,
    pub selected_index: usize,
    pub path: Vec<f64>,
    pub mean_deviance: Vec<f64>,
    pub folds: usize,
    pub attempts: u64,
}

fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeded(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

pub fn cv_lambda(columns: &[&[f64]], y: &[f64], family: Family, folds: usize, seed: u64) -> Result<CvResult, ScoreError> {
    cv_lambda_with(Execution::default(), columns, y, family, folds, seed)
}

/// K-fold cross-validation over [`lambda_path`], minimizing mean held-out
/// deviance. Fold membership is fixed from `seed` before any fit runs.
pub fn cv_lambda_with(
    exec: Execution,
    columns: &[&[f64]],
    y: &[f64],
    family: Family,
    folds: usize,
    seed: u64,
) -> Result<CvResult, ScoreError> {
    let n = y.len();
    if folds < 2 || folds > n {
        return Err(ScoreError::InvalidFolds { folds, n });
    }
    let path = lambda_path(columns, y)?;
    let mut attempt = 0;
    let assignment = loop {
        let s = if attempt == 0 { seed } else { derive_seed(seed, attempt) };
        let a = fold_assignment(n, folds, s);
        let degenerate = family == Family::Logistic
            && (0..folds).any(|k| {
                let mut train = y.iter().zip(&a).filter(|(_, &f)| f != k).map(|(v, _)| *v);
                let first = train.next();
                first.is_none_or(|f| train.all(|v| v == f))
            });
        if !degenerate {
            break a;
        }
        attempt += 1;
        if attempt >= MAX_REFOLDS {
            return Err(ScoreError::DegenerateFold(attempt));
        }
    };
    let per_fold: Vec<Result<Vec<f64>, ScoreError>> = exec.map_range(folds, |k| {
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == k).collect();
        let sub = |idx: &[usize], c: &[f64]| idx.iter().map(|&i| c[i]).collect::<Vec<f64>>();
        let train_cols: Vec<Vec<f64>> = columns.iter().map(|c| sub(&train, c)).collect();
        let test_cols: Vec<Vec<f64>> = columns.iter().map(|c| sub(&test, c)).collect();
        let train_refs: Vec<&[f64]> = train_cols.iter().map(Vec::as_slice).collect();
        let test_refs: Vec<&[f64]> = test_cols.iter().map(Vec::as_slice).collect();
        let ytrain = sub(&train, y);
        let ytest = sub(&test, y);
        let fits = fit_path(&train_refs, &ytrain, family, &path)?;
        Ok(fits.iter().map(|f| deviance(family, &ytest, &f.predict(&test_refs))).collect())
    });
    let mut total = vec![0.0; path.len()];
    for fold in per_fold {
        for (t, d) in total.iter_mut().zip(fold?) {
            *t += d;
        }
    }
    let mean_deviance: Vec<f64> = total.iter().map(|t| t / n as f64).collect();
    let mut best = 0;
    for (i, d) in mean_deviance.iter().enumerate() {
        if *d < mean_deviance[best] {
            best = i;
        }
    }
    Ok(CvResult { lambda: path[best], selected_index: best, path, mean_deviance, folds, attempts: attempt + 1 })
}

/// How the penalty is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    CrossValidated { folds: usize, seed: u64 },
}

/// A fitted score model with named variables, serializable for audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreModel {
    pub kind: ScoreKind,
    pub family: Family,
    pub training_role: TrainingRole,
    pub lambda: f64,
    pub intercept: f64,
    pub variables: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standardization: Vec<Standardization>,
    pub sweeps: usize,
    pub converged: bool,
    pub cv: Option<CvResult>,
}

impl ScoreModel {
    fn fit(&self) -> LassoFit {
        LassoFit {
            family: self.family,
            lambda: self.lambda,
            intercept: self.intercept,
            coefficients: self.coefficients.clone(),
            standardization: self.standardization.clone(),
            diagnostics: FitDiagnostics { sweeps: self.sweeps, converged: self.converged, objective_trace: Vec::new() },
        }
    }

    /// Scores for a design. Variables the design lacks are held at their
    /// training mean, so they contribute nothing.
    pub fn score(&self, view: DesignView<'_>) -> Vec<f64> {
        let filler: Vec<Vec<f64>> = self.standardization.iter().map(|s| vec![s.mean; view.n()]).collect();
        let cols: Vec<&[f64]> = self
            .variables
            .iter()
            .enumerate()
            .map(|(j, name)| view.column(name).map_or(filler[j].as_slice(), |c| c.values.as_slice()))
            .collect();
        self.fit().predict(&cols)
    }
}

/// Fitted score values on the analysis sample and, when given, the pilot.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedScore {
    pub model: ScoreModel,
    pub analysis: Vec<f64>,
    pub pilot: Option<Vec<f64>>,
}

fn fit_model(
    kind: ScoreKind,
    training_role: TrainingRole,
    variables: Vec<String>,
    columns: &[&[f64]],
    y: &[f64],
    family: Family,
    choice: LambdaChoice,
) -> Result<ScoreModel, ScoreError> {
    let (lambda, cv) = match choice {
        LambdaChoice::Fixed(l) => (l, None),
        LambdaChoice::CrossValidated { folds, seed } => {
            let cv = cv_lambda(columns, y, family, folds, seed)?;
            (cv.lambda, Some(cv))
        }
    };
    let fit = fit_lasso(columns, y, family, lambda)?;
    Ok(ScoreModel {
        kind,
        family,
        training_role,
        lambda: fit.lambda,
        intercept: fit.intercept,
        variables,
        coefficients: fit.coefficients,
        standardization: fit.standardization,
        sweeps: fit.diagnostics.sweeps,
        converged: fit.diagnostics.converged,
        cv,
    })
}

/// Logistic propensity model fit on the whole analysis sample.
///
/// Takes outcome-free views only, so the outcome cannot influence it.
pub fn propensity_scores(analysis: DesignView<'_>, pilot: Option<DesignView<'_>>, choice: LambdaChoice) -> Result<FittedScore, ScoreError> {
    let names: Vec<String> = analysis.column_names().into_iter().map(str::to_string).collect();
    let cols: Vec<&[f64]> = analysis.columns().iter().map(|c| c.values.as_slice()).collect();
    let z: Vec<f64> = analysis.treatment().iter().map(|&t| f64::from(t)).collect();
    if z.iter().all(|&v| v == z[0]) {
        return Err(ScoreError::ZeroVariance("treatment".into()));
    }
    let model = fit_model(ScoreKind::Propensity, TrainingRole::AnalysisAll, names, &cols, &z, Family::Logistic, choice)?;
    let a = model.score(analysis);
    let p = pilot.map(|v| model.score(v));
    Ok(FittedScore { model, analysis: a, pilot: p })
}

/// Outcome model fit on pilot controls, evaluated on the analysis sample.
/// Binary outcomes get a logistic fit, anything else a linear one.
pub fn prognostic_scores(pilot: &StudyData, analysis: DesignView<'_>, choice: LambdaChoice) -> Result<FittedScore, ScoreError> {
    let y = pilot.outcome().ok_or(DataError::NoOutcome)?;
    if y.iter().all(|&v| v == y[0]) {
        return Err(ScoreError::ZeroVariance("outcome".into()));
    }
    let controls = pilot.control_rows();
    if controls.len() != pilot.n() {
        log::warn!("prognostic model uses only the {} pilot controls", controls.len());
    }
    let pilot_c = pilot.subset(&controls);
    let y = pilot_c.outcome().ok_or(DataError::NoOutcome)?;
    let names: Vec<String> = analysis
        .column_names()
        .into_iter()
        .filter(|n| pilot_c.column(n).is_some())
        .map(str::to_string)
        .collect();
    let cols: Vec<&[f64]> = names.iter().map(|n| pilot_c.column(n).expect("filtered").values.as_slice()).collect();
    let family = if pilot_c.outcome_is_binary() { Family::Logistic } else { Family::Linear };
    let model = fit_model(ScoreKind::Prognostic, TrainingRole::PilotControls, names, &cols, y, family, choice)?;
    let a = model.score(analysis);
    let p = model.score(pilot.design());
    Ok(FittedScore { model, analysis: a, pilot: Some(p) })
}

/// Quantile cut points; bins are left-open, right-closed, with the first
/// bin unbounded below.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileBins {
    pub requested_k: usize,
    pub cutpoints: Vec<f64>,
}

impl QuantileBins {
    pub fn n_bins(&self) -> usize {
        self.cutpoints.len() + 1
    }

    /// Zero-based bin index.
    pub fn assign(&self, v: f64) -> u32 {
        self.cutpoints.partition_point(|&c| c < v) as u32
    }

    /// Labels `1..=n_bins`.
    pub fn labels(&self) -> Vec<String> {
        (1..=self.n_bins()).map(|i| i.to_string()).collect()
    }
}

/// Type-7 quantile bins of `scores` at probabilities `i/k`. Tied cut points
/// collapse adjacent bins.
pub fn quantile_bins(scores: &[f64], k: usize) -> Result<(QuantileBins, Vec<u32>), ScoreError> {
    if k < 2 {
        return Err(ScoreError::InvalidBinCount(k));
    }
    if scores.is_empty() || scores.iter().any(|v| !v.is_finite()) {
        return Err(ScoreError::NonFiniteScore);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(ScoreError::AllTied);
    }
    let mut cutpoints: Vec<f64> = (1..k).map(|i| quantile_type7(&sorted, i as f64 / k as f64)).collect();
    let before = cutpoints.len();
    cutpoints.dedup();
    if cutpoints.len() < before {
        log::warn!("tied quantiles collapsed {} of {k} bins", before - cutpoints.len());
    }
    let bins = QuantileBins { requested_k: k, cutpoints };
    let codes = scores.iter().map(|&v| bins.assign(v)).collect();
    Ok((bins, codes))
}
