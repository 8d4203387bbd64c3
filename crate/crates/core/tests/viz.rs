mod common;

use std::path::PathBuf;

use common::*;
use jointvip_core::balance::bias_table;
use jointvip_core::matchopt::{match_units, postmatch_bias, MatchSpec};
use jointvip_core::viz::{render, PlotConfig, PlotVariant};

fn golden(name: &str, svg: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, svg).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {name}; rerun with UPDATE_GOLDEN=1"));
    assert!(want == svg, "{name} differs from golden copy");
}

fn marker_centres(svg: &str) -> Vec<(f64, f64)> {
    svg.lines()
        .filter(|l| l.contains(r#"class="marker""#))
        .map(|l| {
            let attr = |k: &str| -> f64 {
                let start = l.find(&format!(" {k}=\"")).unwrap() + k.len() + 3;
                l[start..start + l[start..].find('"').unwrap()].parse().unwrap()
            };
            (attr("cx"), attr("cy"))
        })
        .collect()
}

#[test]
fn seed41_plots_match_golden_copies() {
    let (analysis, pilot) = three_arm(41, 60, 240, 120, 6);
    let rows = bias_table(analysis.design(), &pilot, &[]).unwrap();
    let names = analysis.column_names();
    let (_, m) = match_units(analysis.design(), &names, &MatchSpec::default()).unwrap();
    let (post, _) = postmatch_bias(&m, analysis.design(), &pilot, &[], &rows).unwrap();
    for variant in [PlotVariant::Love, PlotVariant::JointvipAbs, PlotVariant::JointvipSigned, PlotVariant::JointvipPrepost] {
        let cfg = PlotConfig::new(variant);
        let svg = render(&rows, &cfg, Some(&post)).unwrap();
        assert_eq!(svg, render(&rows, &cfg, Some(&post)).unwrap());
        assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        if variant != PlotVariant::Love {
            let centres = marker_centres(&svg);
            assert_eq!(centres.len(), 6);
            for (x, y) in centres {
                assert!((0.0..=760.0).contains(&x) && (0.0..=560.0).contains(&y));
            }
        }
        golden(&format!("seed41_{}.svg", variant.file_stem()), &svg);
    }
}

#[test]
fn larger_bias_sits_further_from_origin() {
    let (analysis, pilot) = three_arm(41, 60, 240, 120, 6);
    let rows = bias_table(analysis.design(), &pilot, &[]).unwrap();
    let svg = render(&rows, &PlotConfig::new(PlotVariant::JointvipAbs), None).unwrap();
    // markers follow row order, which is sorted by descending |bias|
    let centres = marker_centres(&svg);
    let x: Vec<f64> = rows.iter().map(|r| r.ovb_smd.abs()).collect();
    for i in 0..x.len() {
        for j in 0..x.len() {
            if x[i] < x[j] {
                assert!(centres[i].0 < centres[j].0);
            }
        }
    }
}
