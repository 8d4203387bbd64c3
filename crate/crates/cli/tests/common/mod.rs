#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("demo")
}

/// Demo config as JSON with absolute input paths.
pub fn demo_config() -> Value {
    let text = fs::read_to_string(demo_dir().join("config.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    for key in ["analysis_csv", "pilot_csv"] {
        let rel = v[key].as_str().unwrap().to_string();
        v[key] = Value::String(demo_dir().join(rel).display().to_string());
    }
    v
}

pub fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

pub fn jointvip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jointvip")).args(args).output().unwrap()
}

pub fn run_ok(args: &[&str]) {
    let out = jointvip(args);
    assert!(out.status.success(), "jointvip {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// Parses the one-line JSON error record from stderr.
pub fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON line in {text}"));
    serde_json::from_str(line).unwrap()
}

/// Analysis table whose pairs `t{i}`/`c{i}` reproduce a 2×2 table, plus a
/// pairs CSV and a minimal config. Returns the config path.
pub fn paired_fixture(dir: &Path, both: usize, treated_only: usize, control_only: usize, neither: usize) -> PathBuf {
    let mut analysis = String::from("id,treated,y,x\n");
    let mut pairs = String::from("pair_id,treated_id,control_id,distance,block_key\n");
    let mut i = 0;
    for (count, (yt, yc)) in [(both, (1, 1)), (treated_only, (1, 0)), (control_only, (0, 1)), (neither, (0, 0))] {
        for _ in 0..count {
            analysis.push_str(&format!("t{i},1,{yt},{}\nc{i},0,{yc},{}\n", i % 7, i % 5));
            pairs.push_str(&format!("{i},t{i},c{i},0,all\n"));
            i += 1;
        }
    }
    fs::write(dir.join("analysis.csv"), analysis).unwrap();
    fs::write(dir.join("pairs.csv"), pairs).unwrap();
    let cfg = serde_json::json!({
        "analysis_csv": "analysis.csv",
        "variables": [{"name": "x", "kind": "continuous"}],
        "outcomes": [{"name": "csec", "column": "y"}],
        "out_dir": "out"
    });
    write_config(dir, &cfg)
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file under `dir`, as (relative path, bytes), sorted.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
