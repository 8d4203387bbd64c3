mod common;

use common::*;
use jointvip_core::dataset::{Role, StudyData, VariableSpec};
use jointvip_core::scores::{
    cv_lambda, fit_lasso, lambda_path, prognostic_scores, propensity_scores, Family, LambdaChoice, ScoreError,
};

fn refs(cols: &[Vec<f64>]) -> Vec<&[f64]> {
    cols.iter().map(Vec::as_slice).collect()
}

/// Columns that are centred with population sd 1 and mutually orthogonal.
fn orthonormal_design(n: usize) -> Vec<Vec<f64>> {
    // +-1 Walsh-style columns over n = 8 * m rows
    let walsh = |bit: usize| -> Vec<f64> { (0..n).map(|i| if (i >> bit) & 1 == 0 { 1.0 } else { -1.0 }).collect() };
    vec![walsh(0), walsh(1), walsh(2)]
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

#[test]
fn orthonormal_design_soft_thresholds() {
    let n = 64;
    let x = orthonormal_design(n);
    let mut r = rng(1);
    let y: Vec<f64> = (0..n).map(|i| 0.9 * x[0][i] - 0.3 * x[1][i] + 0.05 * x[2][i] + 0.4 * normal(&mut r) + 2.0).collect();
    let ybar = y.iter().sum::<f64>() / n as f64;
    for lambda in [0.0, 0.01, 0.1, 0.25, 0.5, 2.0] {
        let fit = fit_lasso(&refs(&x), &y, Family::Linear, lambda).unwrap();
        for j in 0..3 {
            let ols: f64 = x[j].iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            assert!((fit.coefficients[j] - soft(ols, lambda)).abs() < 1e-8, "lambda {lambda} j {j}");
        }
        assert!((fit.intercept - ybar).abs() < 1e-8);
    }
}

#[test]
fn infinite_lambda_shrinks_everything() {
    let (analysis, _) = three_arm(2, 30, 30, 10, 3);
    let cols: Vec<&[f64]> = analysis.columns().iter().map(|c| c.values.as_slice()).collect();
    let y: Vec<f64> = cols[0].iter().map(|v| 3.0 * v + 1.0).collect();
    let fit = fit_lasso(&cols, &y, Family::Linear, f64::INFINITY).unwrap();
    assert!(fit.coefficients.iter().all(|&b| b == 0.0));
    assert!((fit.intercept - y.iter().sum::<f64>() / y.len() as f64).abs() < 1e-12);
}

/// Unpenalized logistic regression by Newton's method on the raw scale.
fn newton_logistic(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = x.len() + 1;
    let n = y.len();
    let row = |i: usize| -> Vec<f64> { std::iter::once(1.0).chain(x.iter().map(|c| c[i])).collect() };
    let mut b = vec![0.0; k];
    for _ in 0..100 {
        let mut g = vec![0.0; k];
        let mut h = vec![vec![0.0; k]; k];
        for i in 0..n {
            let r = row(i);
            let eta: f64 = r.iter().zip(&b).map(|(a, c)| a * c).sum();
            let p = 1.0 / (1.0 + (-eta).exp());
            for a in 0..k {
                g[a] += (y[i] - p) * r[a];
                for c in 0..k {
                    h[a][c] += p * (1.0 - p) * r[a] * r[c];
                }
            }
        }
        // solve h * step = g by elimination
        let mut m: Vec<Vec<f64>> = h.iter().zip(&g).map(|(hr, gv)| hr.iter().copied().chain(std::iter::once(*gv)).collect()).collect();
        for col in 0..k {
            let piv = (col..k).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()).unwrap();
            m.swap(col, piv);
            let d = m[col][col];
            for v in m[col].iter_mut() {
                *v /= d;
            }
            for r in 0..k {
                if r != col {
                    let f = m[r][col];
                    let p = m[col].clone();
                    for (v, q) in m[r].iter_mut().zip(p) {
                        *v -= f * q;
                    }
                }
            }
        }
        let step: Vec<f64> = m.iter().map(|r| r[k]).collect();
        for (bv, s) in b.iter_mut().zip(&step) {
            *bv += s;
        }
        if step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-13 {
            break;
        }
    }
    b
}

#[test]
fn zero_lambda_logistic_matches_newton() {
    let n = 30;
    let mut r = rng(30);
    let x: Vec<Vec<f64>> = (0..3).map(|_| normals(&mut r, n)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let eta = 0.3 + 0.8 * x[0][i] - 0.6 * x[1][i] + 0.2 * x[2][i];
            f64::from(uniform(&mut r) < 1.0 / (1.0 + (-eta).exp()))
        })
        .collect();
    let oracle = newton_logistic(&x, &y);
    let fit = fit_lasso(&refs(&x), &y, Family::Logistic, 0.0).unwrap();
    let (b0, b) = fit.original_scale();
    assert!((b0 - oracle[0]).abs() < 1e-6, "{b0} vs {}", oracle[0]);
    for j in 0..3 {
        assert!((b[j] - oracle[j + 1]).abs() < 1e-6, "coef {j}: {} vs {}", b[j], oracle[j + 1]);
    }
}

#[test]
fn zero_lambda_linear_matches_normal_equations() {
    let n = 40;
    let mut r = rng(8);
    let x: Vec<Vec<f64>> = (0..3).map(|_| normals(&mut r, n)).collect();
    let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * x[0][i] - x[1][i] + 0.5 * x[2][i] + 0.3 * normal(&mut r)).collect();
    let design = nalgebra::DMatrix::from_fn(n, 4, |i, j| if j == 0 { 1.0 } else { x[j - 1][i] });
    let yv = nalgebra::DVector::from_column_slice(&y);
    let xtx = design.transpose() * &design;
    let beta = xtx.lu().solve(&(design.transpose() * yv)).unwrap();
    let fit = fit_lasso(&refs(&x), &y, Family::Linear, 0.0).unwrap();
    let (b0, b) = fit.original_scale();
    assert!((b0 - beta[0]).abs() < 1e-8);
    for j in 0..3 {
        assert!((b[j] - beta[j + 1]).abs() < 1e-8);
    }
}

#[test]
fn kkt_and_monotone_objective() {
    let n = 120;
    let mut r = rng(77);
    let x: Vec<Vec<f64>> = (0..6).map(|_| normals(&mut r, n)).collect();
    let y_lin: Vec<f64> = (0..n).map(|i| x[0][i] - 0.5 * x[3][i] + normal(&mut r)).collect();
    let y_bin: Vec<f64> = y_lin.iter().map(|v| f64::from(*v > 0.0)).collect();
    for (family, y) in [(Family::Linear, &y_lin), (Family::Logistic, &y_bin)] {
        let path = lambda_path(&refs(&x), y).unwrap();
        for &lambda in path.iter().step_by(7) {
            let fit = fit_lasso(&refs(&x), y, family, lambda).unwrap();
            assert!(fit.diagnostics.converged);
            assert!(fit.kkt_residual(&refs(&x), y) <= 1e-5, "{family:?} lambda {lambda}");
            let trace = &fit.diagnostics.objective_trace;
            assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
        }
    }
}

#[test]
fn cv_null_picks_heavy_shrinkage() {
    let n = 200;
    let mut r = rng(3);
    let x: Vec<Vec<f64>> = (0..5).map(|_| normals(&mut r, n)).collect();
    let y: Vec<f64> = normals(&mut r, n);
    let cv = cv_lambda(&refs(&x), &y, Family::Linear, 10, 3).unwrap();
    assert_eq!(cv.path.len(), 50);
    assert!(cv.selected_index < 5, "selected {}", cv.selected_index);
}

#[test]
fn cv_noiseless_picks_light_shrinkage() {
    let n = 100;
    let mut r = rng(4);
    let x: Vec<Vec<f64>> = (0..4).map(|_| normals(&mut r, n)).collect();
    let y: Vec<f64> = (0..n).map(|i| 2.0 * x[0][i] - x[1][i] + 0.5 * x[2][i]).collect();
    let cv = cv_lambda(&refs(&x), &y, Family::Linear, 10, 4).unwrap();
    assert!(cv.selected_index >= 45, "selected {}", cv.selected_index);
}

#[test]
fn leave_one_out_runs() {
    let n = 20;
    let mut r = rng(20);
    let x: Vec<Vec<f64>> = (0..2).map(|_| normals(&mut r, n)).collect();
    let y: Vec<f64> = (0..n).map(|i| x[0][i] + normal(&mut r)).collect();
    let cv = cv_lambda(&refs(&x), &y, Family::Linear, n, 1).unwrap();
    assert!(cv.path.contains(&cv.lambda));
    assert!(matches!(cv_lambda(&refs(&x), &y, Family::Linear, n + 1, 1), Err(ScoreError::InvalidFolds { .. })));
}

#[test]
fn propensity_null_is_flat() {
    let n = 2000;
    let mut r = rng(2000);
    let cols: Vec<Vec<f64>> = (0..4).map(|_| normals(&mut r, n)).collect();
    let z: Vec<u8> = (0..n).map(|_| u8::from(uniform(&mut r) < 0.3)).collect();
    let frac = z.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
    let data = continuous_table(cols, z, None, "u", Role::Analysis);
    let ps = propensity_scores(data.design(), None, LambdaChoice::CrossValidated { folds: 10, seed: 5 }).unwrap();
    let worst = ps.analysis.iter().map(|p| (p - frac).abs()).fold(0.0, f64::max);
    assert!(worst < 0.05, "max deviation {worst}");
}

#[test]
fn propensity_monotone_and_deterministic() {
    let (data, _) = three_arm(17, 60, 90, 10, 3);
    let a = propensity_scores(data.design(), None, LambdaChoice::CrossValidated { folds: 5, seed: 17 }).unwrap();
    let b = propensity_scores(data.design(), None, LambdaChoice::CrossValidated { folds: 5, seed: 17 }).unwrap();
    assert_eq!(a.analysis, b.analysis);
    assert!(a.analysis.iter().all(|&p| p > 0.0 && p < 1.0));

    // one separating binary covariate: scores increase with it
    let n = 40;
    let s: Vec<f64> = (0..n).map(|i| f64::from(i % 4 == 0)).collect();
    let z: Vec<u8> = s.iter().enumerate().map(|(i, &v)| u8::from(v == 1.0 || i % 9 == 1)).collect();
    let d = StudyData::from_parts(vec![VariableSpec::binary("s")], vec![s.clone()], z, None, ids("u", n), Role::Analysis).unwrap();
    let lmin = lambda_path(&[&s], &d.treatment().iter().map(|&v| f64::from(v)).collect::<Vec<_>>()).unwrap()[49];
    let ps = propensity_scores(d.design(), None, LambdaChoice::Fixed(lmin)).unwrap();
    for i in 0..n {
        for j in 0..n {
            if s[i] > s[j] {
                assert!(ps.analysis[i] > ps.analysis[j]);
            }
        }
    }
}

#[test]
fn prognostic_recovers_exact_linear_outcome() {
    let (analysis, pilot) = three_arm(6, 30, 30, 60, 3);
    let y = pilot.column("x1").unwrap().values.clone();
    let pilot = pilot.with_outcome(y).unwrap();
    let fit = prognostic_scores(&pilot, analysis.design(), LambdaChoice::Fixed(0.0)).unwrap();
    let x1 = &analysis.column("x1").unwrap().values;
    for (p, x) in fit.analysis.iter().zip(x1) {
        assert!((p - x).abs() < 1e-6);
    }
    let again = prognostic_scores(&pilot, analysis.design(), LambdaChoice::Fixed(0.0)).unwrap();
    assert_eq!(fit.analysis, again.analysis);

    let flat = pilot.clone().with_outcome(vec![1.0; pilot.n()]).unwrap();
    assert!(matches!(
        prognostic_scores(&flat, analysis.design(), LambdaChoice::Fixed(0.1)),
        Err(ScoreError::ZeroVariance(_))
    ));
}
