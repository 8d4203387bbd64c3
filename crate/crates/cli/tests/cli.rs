mod common;

use std::fs;

use common::*;
use jointvip_cli::commands::suggest_tiers;
use jointvip_core::balance::BalanceRow;
use jointvip_core::dataset::{load_csv, CsvLayout, Role, VariableSpec};
use serde_json::{json, Value};

fn demo_with(tmp: &std::path::Path, edit: impl FnOnce(&mut Value)) -> std::path::PathBuf {
    let mut cfg = demo_config();
    cfg["out_dir"] = json!(tmp.join("out").display().to_string());
    edit(&mut cfg);
    write_config(tmp, &cfg)
}

#[test]
fn vip_writes_design_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo_with(tmp.path(), |_| {});
    run_ok(&["vip", "--config", cfg.to_str().unwrap(), "--outcome", "csec"]);
    let dir = tmp.path().join("out/csec");
    for f in ["bias_table.csv", "jointvip_abs.svg", "jointvip_signed.svg", "love.svg", "tier_suggestion.json", "scores.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    assert!(!tmp.path().join("out/nicu").exists());
    let header = fs::read_to_string(dir.join("bias_table.csv")).unwrap();
    assert!(header.lines().next().unwrap().contains("bias"));
    let svg = fs::read_to_string(dir.join("jointvip_abs.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

#[test]
fn missing_pilot_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere.csv").display().to_string();
    let cfg = demo_with(tmp.path(), |c| c["pilot_csv"] = json!(missing));
    let out = jointvip(&["vip", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let e = error_line(&out);
    assert_eq!(e["code"], 3);
    assert_eq!(e["error"], "data");
    assert!(e["message"].as_str().unwrap().contains("nowhere.csv"), "{e}");
}

#[test]
fn tier_suggestion_thresholds() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("a.csv");
    fs::write(&path, "id,treated,g,b,x\n1,1,p,1,0.5\n2,0,q,0,1.5\n3,1,q,1,2.0\n4,0,p,0,0.1\n").unwrap();
    let vars = [VariableSpec::categorical("g", ["p", "q"]), VariableSpec::binary("b"), VariableSpec::continuous("x")];
    let data = load_csv(&path, &vars, &CsvLayout::new("id", "treated", None), Role::Analysis).unwrap();
    let row = |name: &str, bias: f64| BalanceRow {
        variable: name.into(),
        is_score: false,
        mean_treated: 0.5,
        mean_control: 0.5,
        delta: 0.0,
        pilot_sd: 1.0,
        pilot_outcome_sd: 1.0,
        ovb_smd: 0.0,
        pooled_smd: 0.0,
        pilot_corr: 0.0,
        beta: 0.0,
        bias,
        flag: None,
    };
    let rows = vec![row("g=q", 0.015), row("b", 0.02), row("x", -0.03), row("g=p", -0.005)];
    let s = suggest_tiers(&data, &rows, "y", 0.02, 0.01);
    let names = |c: &[jointvip_cli::commands::TierCandidate]| c.iter().map(|c| c.variable.clone()).collect::<Vec<_>>();
    assert_eq!(names(&s.tier1), ["b", "x"]);
    assert_eq!(names(&s.tier2), ["g=q"]);
    assert_eq!(s.tier2[0].tier_variable.as_deref(), Some("g"));
    assert_eq!(s.tier1[1].tier_variable, None);
    assert_eq!(s.suggested_tiers, vec![vec!["b".to_string()], vec!["g".to_string()]]);
}

#[test]
fn match_accounts_for_every_treated_unit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo_with(tmp.path(), |_| {});
    run_ok(&["match", "--config", cfg.to_str().unwrap(), "--outcome", "csec"]);
    let dir = tmp.path().join("out/csec");
    let summary = read_json(&dir.join("match_summary.json"));
    let pairs = fs::read_to_string(dir.join("pairs.csv")).unwrap().lines().count() - 1;
    let excluded = fs::read_to_string(dir.join("excluded.csv")).unwrap().lines().count() - 1;
    assert_eq!(summary["n_pairs"].as_u64().unwrap() as usize, pairs);
    assert_eq!(pairs + excluded, summary["n_treated"].as_u64().unwrap() as usize);
    assert_eq!(summary["tier_tv"].as_array().unwrap().len(), 3);
    assert_eq!(summary["tier_tv"][0], 0.0);
    assert!(dir.join("postmatch_bias.csv").is_file() && dir.join("jointvip_prepost.svg").is_file());
    // every control used at most once
    let mut controls: Vec<String> =
        fs::read_to_string(dir.join("pairs.csv")).unwrap().lines().skip(1).map(|l| l.split(',').nth(2).unwrap().to_string()).collect();
    let n = controls.len();
    controls.sort();
    controls.dedup();
    assert_eq!(controls.len(), n);
}

#[test]
fn continuous_tier_without_bins_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo_with(tmp.path(), |c| c["outcomes"][0]["tiers"] = json!([["hba1c"]]));
    let out = jointvip(&["match", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert!(e["message"].as_str().unwrap().contains("bins"), "{e}");
}

#[test]
fn infer_reproduces_cesarean_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = paired_fixture(tmp.path(), 1078, 2023, 1844, 3748);
    let pairs = tmp.path().join("pairs.csv");
    run_ok(&["infer", "--config", cfg.to_str().unwrap(), "--outcome", "csec", "--pairs", pairs.to_str().unwrap()]);
    let r = read_json(&tmp.path().join("out/csec/inference.json"));
    assert_eq!(r["n_pairs"], 8693);
    assert!((r["p_normal"].as_f64().unwrap() - 0.0020).abs() <= 0.0002, "{r}");
    assert!((r["risk_difference"].as_f64().unwrap() - 0.0206).abs() <= 0.0001);
    assert_eq!(r["significant"], true);
    assert!((r["sensitivity"]["threshold_gamma"].as_f64().unwrap() - 1.041).abs() < 1e-9);
}

#[test]
fn infer_on_nicu_table_is_not_significant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = paired_fixture(tmp.path(), 163, 1004, 996, 6530);
    let pairs = tmp.path().join("pairs.csv");
    run_ok(&["infer", "--config", cfg.to_str().unwrap(), "--pairs", pairs.to_str().unwrap()]);
    let r = read_json(&tmp.path().join("out/csec/inference.json"));
    assert!((r["p_normal"].as_f64().unwrap() - 0.429).abs() <= 0.001, "{r}");
    assert_eq!(r["significant"], false);
}

#[test]
fn infer_without_discordant_pairs_is_numeric_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = paired_fixture(tmp.path(), 1, 0, 0, 0);
    let pairs = tmp.path().join("pairs.csv");
    let out = jointvip(&["infer", "--config", cfg.to_str().unwrap(), "--pairs", pairs.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_line(&out)["error"], "numeric");
}

#[test]
fn manifest_hash_tracks_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo_with(tmp.path(), |_| {});
    run_ok(&["pipeline", "--config", cfg.to_str().unwrap()]);
    let first = read_json(&tmp.path().join("out/run_manifest.json"));
    run_ok(&["pipeline", "--config", cfg.to_str().unwrap()]);
    let second = read_json(&tmp.path().join("out/run_manifest.json"));
    assert_eq!(first, second);
    for outcome in ["csec", "nicu"] {
        assert!(tmp.path().join("out").join(outcome).join("inference.json").is_file());
        assert!(!first["outputs"][outcome].as_array().unwrap().is_empty());
    }

    let edited = tempfile::tempdir().unwrap();
    let cfg2 = demo_with(edited.path(), |c| c["outcomes"][1]["tiers"] = json!([["carpenter_coustan", "ogtt_fasting"]]));
    let out = jointvip(&["vip", "--config", cfg2.to_str().unwrap(), "--outcome", "nicu"]);
    assert!(out.status.success());
    let c1 = jointvip_cli::config::PipelineConfig::load(&cfg).unwrap();
    let c2 = jointvip_cli::config::PipelineConfig::load(&cfg2).unwrap();
    assert_eq!(first["config_hash"], json!(c1.hash()));
    assert_ne!(c1.hash(), c2.hash());
}

#[test]
fn design_stage_never_reads_analysis_outcomes() {
    let tmp = tempfile::tempdir().unwrap();
    // replace both analysis outcome columns with junk
    let text = fs::read_to_string(demo_dir().join("analysis.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let cols: Vec<&str> = header.split(',').collect();
    let (ci, ni) = (cols.iter().position(|c| *c == "csec").unwrap(), cols.iter().position(|c| *c == "nicu").unwrap());
    let mut junk = format!("{header}\n");
    for line in lines {
        let mut f: Vec<String> = line.split(',').map(str::to_string).collect();
        f[ci] = "garbage".into();
        f[ni] = String::new();
        junk.push_str(&f.join(","));
        junk.push('\n');
    }
    let analysis = tmp.path().join("analysis.csv");
    fs::write(&analysis, junk).unwrap();
    let cfg = demo_with(tmp.path(), |c| c["analysis_csv"] = json!(analysis.display().to_string()));
    let cfg = cfg.to_str().unwrap();
    run_ok(&["vip", "--config", cfg]);
    run_ok(&["match", "--config", cfg]);
    let out = jointvip(&["infer", "--config", cfg, "--outcome", "csec"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // same design artifacts as with the real outcomes
    let clean = tempfile::tempdir().unwrap();
    let clean_cfg = demo_with(clean.path(), |_| {});
    run_ok(&["match", "--config", clean_cfg.to_str().unwrap(), "--outcome", "csec"]);
    for f in ["pairs.csv", "excluded.csv", "postmatch_bias.csv", "match_summary.json"] {
        assert_eq!(
            fs::read(tmp.path().join("out/csec").join(f)).unwrap(),
            fs::read(clean.path().join("out/csec").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn bad_command_lines_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo_with(tmp.path(), |c| c["tier_one_threshold"] = json!(0.3));
    let out = jointvip(&["vip", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("tier_one_threshold"));

    let out = jointvip(&["vip"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("--config"));

    assert_eq!(jointvip(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn seed_override_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = paired_fixture(tmp.path(), 10, 30, 5, 10);
    // random_split pilot from the fixture's controls, no scores to keep it quick
    let mut v = read_json(&cfg);
    v["propensity_score"] = json!(false);
    v["prognostic_score"] = json!(false);
    write_config(tmp.path(), &v);
    run_ok(&["pipeline", "--config", cfg.to_str().unwrap(), "--seed", "99"]);
    let m = read_json(&tmp.path().join("out/run_manifest.json"));
    assert_eq!(m["seeds"]["global"], 99);
    assert_eq!(m["seeds"]["pilot"], json!(jointvip_core::rng::derive_seed(99, 1)));
}
