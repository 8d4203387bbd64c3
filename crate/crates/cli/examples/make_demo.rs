//! Regenerates the bundled synthetic demo tables in `demo/`.
//!
//! The analysis table has two binary outcomes and a year column shared with
//! no pilot unit; the external pilot holds earlier-year controls.
//!
//! `cargo run -p jointvip-cli --example make_demo`

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const BMI: [&str; 3] = ["normal", "overweight", "obese"];
const RACE: [&str; 4] = ["asian", "black", "hispanic", "white"];

struct Unit {
    year: u32,
    age: f64,
    bmi: usize,
    race: usize,
    nulliparous: u8,
    prediabetes: u8,
    carpenter_coustan: u8,
    ogtt_fasting: u8,
    ga_diagnosis: f64,
    hba1c: f64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn draw(rng: &mut ChaCha8Rng, years: std::ops::RangeInclusive<u32>) -> Unit {
    let n01: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let bmi = match rng.random::<f64>() {
        u if u < 0.40 => 0,
        u if u < 0.70 => 1,
        _ => 2,
    };
    let race = match rng.random::<f64>() {
        u if u < 0.30 => 0,
        u if u < 0.38 => 1,
        u if u < 0.65 => 2,
        _ => 3,
    };
    let obese = f64::from(bmi == 2);
    Unit {
        year: rng.random_range(years),
        age: (31.0 + 5.0 * n01.sample(rng)).clamp(18.0, 46.0).round(),
        bmi,
        race,
        nulliparous: u8::from(rng.random::<f64>() < 0.42),
        prediabetes: u8::from(rng.random::<f64>() < 0.06 + 0.08 * obese),
        carpenter_coustan: u8::from(rng.random::<f64>() < 0.55),
        ogtt_fasting: u8::from(rng.random::<f64>() < 0.30 + 0.15 * obese),
        ga_diagnosis: (27.0 + 4.5 * n01.sample(rng) - 2.0 * obese).clamp(8.0, 38.0).round(),
        hba1c: ((5.4 + 0.35 * n01.sample(rng) + 0.2 * obese) * 10.0).round() / 10.0,
    }
}

fn treatment_prob(u: &Unit) -> f64 {
    logistic(
        -2.1 + 0.9 * f64::from(u.bmi == 2) + 0.4 * f64::from(u.bmi == 1) + 0.8 * f64::from(u.prediabetes)
            + 0.9 * f64::from(u.ogtt_fasting)
            + 0.3 * f64::from(u.carpenter_coustan)
            - 0.07 * (u.ga_diagnosis - 27.0)
            + 0.18 * (f64::from(u.year) - 2013.0)
            + 0.9 * (u.hba1c - 5.4),
    )
}

fn csec_prob(u: &Unit, z: u8) -> f64 {
    logistic(
        -1.1 + 0.05 * (u.age - 31.0) + 0.8 * f64::from(u.bmi == 2) + 0.3 * f64::from(u.bmi == 1) + 0.5 * f64::from(u.prediabetes)
            + 0.35 * f64::from(u.ogtt_fasting)
            + 0.5 * f64::from(u.nulliparous)
            + 0.08 * f64::from(z),
    )
}

fn nicu_prob(u: &Unit) -> f64 {
    logistic(
        -2.1 + 0.45 * f64::from(u.carpenter_coustan) + 0.4 * f64::from(u.ogtt_fasting) - 0.06 * (u.ga_diagnosis - 27.0)
            + 0.3 * f64::from(u.race == 1)
            + 0.4 * (u.hba1c - 5.4),
    )
}

fn write(path: &Path, prefix: &str, units: &[(Unit, u8, u8, u8)]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "id,treated,csec,nicu,year,age,bmi,race,nulliparous,prediabetes,carpenter_coustan,ogtt_fasting,ga_diagnosis,hba1c"
    )?;
    for (i, (u, z, c, n)) in units.iter().enumerate() {
        writeln!(
            w,
            "{prefix}{i:05},{z},{c},{n},{},{},{},{},{},{},{},{},{},{}",
            u.year, u.age, BMI[u.bmi], RACE[u.race], u.nulliparous, u.prediabetes, u.carpenter_coustan, u.ogtt_fasting, u.ga_diagnosis, u.hba1c
        )?;
    }
    w.flush()
}

fn main() -> std::io::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("demo");
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    let mut analysis = Vec::with_capacity(3000);
    for _ in 0..3000 {
        let u = draw(&mut rng, 2011..=2016);
        let z = u8::from(rng.random::<f64>() < treatment_prob(&u));
        let c = u8::from(rng.random::<f64>() < csec_prob(&u, z));
        let n = u8::from(rng.random::<f64>() < nicu_prob(&u));
        analysis.push((u, z, c, n));
    }
    let mut pilot = Vec::with_capacity(1200);
    for _ in 0..1200 {
        let u = draw(&mut rng, 2007..=2010);
        let c = u8::from(rng.random::<f64>() < csec_prob(&u, 0));
        let n = u8::from(rng.random::<f64>() < nicu_prob(&u));
        pilot.push((u, 0, c, n));
    }
    write(&dir.join("analysis.csv"), "a", &analysis)?;
    write(&dir.join("pilot.csv"), "p", &pilot)?;
    let treated = analysis.iter().filter(|r| r.1 == 1).count();
    println!("analysis: {} rows ({treated} treated); pilot: {} controls", analysis.len(), pilot.len());
    Ok(())
}
