#![allow(dead_code)]

use jointvip_core::dataset::{Role, StudyData, VariableSpec};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:05}")).collect()
}

/// Table of continuous covariates `x0..` plus optional outcome.
pub fn continuous_table(cols: Vec<Vec<f64>>, z: Vec<u8>, y: Option<Vec<f64>>, prefix: &str, role: Role) -> StudyData {
    let schema = (0..cols.len()).map(|j| VariableSpec::continuous(format!("x{j}"))).collect();
    let n = z.len();
    StudyData::from_parts(schema, cols, z, y, ids(prefix, n), role).unwrap()
}

/// Analysis table with `n_t` treated and `n_c` controls whose covariates
/// shift with treatment, plus an all-control pilot with outcome.
pub fn three_arm(seed: u64, n_t: usize, n_c: usize, n_p: usize, k: usize) -> (StudyData, StudyData) {
    let mut r = rng(seed);
    let n = n_t + n_c;
    let z: Vec<u8> = (0..n).map(|i| u8::from(i < n_t)).collect();
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|j| z.iter().map(|&t| normal(&mut r) + 0.3 * j as f64 * f64::from(t)).collect())
        .collect();
    let pcols: Vec<Vec<f64>> = (0..k).map(|_| normals(&mut r, n_p)).collect();
    let y: Vec<f64> = (0..n_p)
        .map(|i| pcols.iter().enumerate().map(|(j, c)| (j as f64 - 1.0) * 0.5 * c[i]).sum::<f64>() + normal(&mut r))
        .collect();
    let analysis = continuous_table(cols, z, None, "a", Role::Analysis);
    let pilot = continuous_table(pcols, vec![0; n_p], Some(y), "p", Role::Pilot);
    (analysis, pilot)
}

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>()
}
