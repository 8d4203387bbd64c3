//! Deterministic SVG rendering of jointVIP and Love plots.
//!
//! Output depends only on the rows and the config: numbers are written with
//! six decimals, elements follow the bias-table order, and no timestamps or
//! random identifiers are emitted.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::balance::BalanceRow;

pub const CURVE_POINTS: usize = 200;
pub const DEFAULT_BIAS_LEVELS: [f64; 5] = [0.005, 0.01, 0.02, 0.03, 0.05];
const SNAP: f64 = 0.05;
const PALETTE: [&str; 6] = ["#1b9e77", "#66a61e", "#e6ab02", "#d95f02", "#e7298a", "#7570b3"];
const HIGH_COLOR: &str = "#b2182b";
const FONT: &str = "sans-serif";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotVariant {
    Love,
    JointvipAbs,
    JointvipSigned,
    JointvipPrepost,
}

impl PlotVariant {
    pub fn file_stem(self) -> &'static str {
        match self {
            PlotVariant::Love => "love",
            PlotVariant::JointvipAbs => "jointvip_abs",
            PlotVariant::JointvipSigned => "jointvip_signed",
            PlotVariant::JointvipPrepost => "jointvip_prepost",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotConfig {
    pub variant: PlotVariant,
    pub bias_levels: Vec<f64>,
    pub label_top_k: usize,
    pub width_px: u32,
    pub height_px: u32,
    pub include_scores: bool,
}

impl PlotConfig {
    pub fn new(variant: PlotVariant) -> Self {
        Self {
            variant,
            bias_levels: DEFAULT_BIAS_LEVELS.to_vec(),
            label_top_k: 12,
            width_px: 760,
            height_px: 560,
            include_scores: true,
        }
    }

    fn validate(&self) -> Result<(), VizError> {
        let ok = !self.bias_levels.is_empty()
            && self.bias_levels.iter().all(|&l| l > 0.0 && l.is_finite())
            && self.bias_levels.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(VizError::InvalidLevels);
        }
        if self.width_px < 200 || self.height_px < 150 {
            return Err(VizError::CanvasTooSmall);
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum VizError {
    #[error("nothing to plot")]
    EmptyInput,
    #[error("bias levels must be positive and strictly increasing")]
    InvalidLevels,
    #[error("canvas must be at least 200x150 pixels")]
    CanvasTooSmall,
    #[error("curve needs level > 0 and 0 < lo < hi")]
    InvalidRange,
    #[error("pre/post plot needs post-match rows")]
    MissingPostRows,
    #[error("no post-match row for `{0}`")]
    UnmatchedVariable(String),
}

/// Points on `corr = level / smd`, log-spaced in `smd`, clipped to
/// `corr <= 1` by starting at `max(lo, level)`.
pub fn bias_curve(level: f64, lo: f64, hi: f64) -> Result<Vec<(f64, f64)>, VizError> {
    if !(level > 0.0 && lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(VizError::InvalidRange);
    }
    let start = lo.max(level);
    if start > hi {
        return Ok(Vec::new());
    }
    if start == hi {
        return Ok(vec![(hi, level / hi)]);
    }
    let (a, b) = (start.ln(), hi.ln());
    Ok((0..CURVE_POINTS)
        .map(|i| {
            let smd = if i == 0 {
                start
            } else if i == CURVE_POINTS - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (CURVE_POINTS - 1) as f64).exp()
            };
            (smd, level / smd)
        })
        .collect())
}

/// Index into the palette, or `None` for "above every level".
fn bucket(levels: &[f64], bias: f64) -> Option<usize> {
    levels.iter().position(|&l| bias.abs() <= l)
}

fn color(levels: &[f64], bias: f64) -> &'static str {
    match bucket(levels, bias) {
        Some(i) => PALETTE[i % PALETTE.len()],
        None => HIGH_COLOR,
    }
}

fn snap_up(v: f64) -> f64 {
    ((v / SNAP - 1e-9).ceil() * SNAP).max(SNAP)
}

fn snap_down(v: f64) -> f64 {
    (v / SNAP + 1e-9).floor() * SNAP
}

/// Axis limits padded by 10% of the data span and snapped to 0.05.
fn axis_limits(values: impl Iterator<Item = f64>, signed: bool, cap: Option<f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = (hi - lo).max(1e-12);
    let hi = snap_up(hi + 0.1 * span);
    let lo = if signed && lo < 0.0 { snap_down(lo - 0.1 * span) } else { 0.0 };
    let lo = if signed { lo.min(-SNAP) } else { lo };
    match cap {
        Some(c) => (lo.max(-c), hi.min(c)),
        None => (lo, hi),
    }
}

fn tick_step(span: f64) -> f64 {
    [0.05, 0.1, 0.2, 0.25, 0.5, 1.0, 2.0, 5.0].into_iter().find(|s| span / s <= 10.0).unwrap_or(10.0)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, v: f64) -> f64 {
        self.left + (v - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, v: f64) -> f64 {
        self.top + self.height - (v - self.y.0) / (self.y.1 - self.y.0) * self.height
    }
}

struct Svg {
    out: String,
}

impl Svg {
    fn new(w: u32, h: u32) -> Self {
        let mut out = String::new();
        let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(out, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>"##);
        Self { out }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, style: &str) {
        let _ = writeln!(self.out, r#"<line x1="{x1:.6}" y1="{y1:.6}" x2="{x2:.6}" y2="{y2:.6}" {style}/>"#);
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: u32, body: &str) {
        let _ = writeln!(
            self.out,
            r#"<text x="{x:.6}" y="{y:.6}" font-family="{FONT}" font-size="{size}" text-anchor="{anchor}">{}</text>"#,
            escape(body)
        );
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn axes(svg: &mut Svg, f: &Frame, xlabel: &str, ylabel: &str, yticks: bool) {
    let axis = r##"stroke="#333333" stroke-width="1""##;
    let grid = r##"stroke="#dddddd" stroke-width="0.5""##;
    let xs = tick_step(f.x.1 - f.x.0);
    let mut k = (f.x.0 / xs).ceil() as i64;
    while k as f64 * xs <= f.x.1 + 1e-9 {
        let v = k as f64 * xs;
        let x = f.px(v);
        svg.line(x, f.top, x, f.top + f.height, grid);
        svg.text(x, f.top + f.height + 16.0, "middle", 11, &format!("{v:.2}"));
        k += 1;
    }
    if yticks {
        let ys = tick_step(f.y.1 - f.y.0);
        let mut k = (f.y.0 / ys).ceil() as i64;
        while k as f64 * ys <= f.y.1 + 1e-9 {
            let v = k as f64 * ys;
            let y = f.py(v);
            svg.line(f.left, y, f.left + f.width, y, grid);
            svg.text(f.left - 6.0, y + 4.0, "end", 11, &format!("{v:.2}"));
            k += 1;
        }
    }
    svg.line(f.left, f.top + f.height, f.left + f.width, f.top + f.height, axis);
    svg.line(f.left, f.top, f.left, f.top + f.height, axis);
    if f.x.0 < 0.0 && f.x.1 > 0.0 {
        svg.line(f.px(0.0), f.top, f.px(0.0), f.top + f.height, axis);
    }
    if f.y.0 < 0.0 && f.y.1 > 0.0 {
        svg.line(f.left, f.py(0.0), f.left + f.width, f.py(0.0), axis);
    }
    svg.text(f.left + f.width / 2.0, f.top + f.height + 40.0, "middle", 13, xlabel);
    let (cx, cy) = (18.0, f.top + f.height / 2.0);
    let _ = writeln!(
        svg.out,
        r#"<text x="{cx:.6}" y="{cy:.6}" font-family="{FONT}" font-size="13" text-anchor="middle" transform="rotate(-90 {cx:.6} {cy:.6})">{}</text>"#,
        escape(ylabel)
    );
}

fn legend(svg: &mut Svg, levels: &[f64], x: f64, y: f64, prepost: bool) {
    svg.text(x, y, "start", 12, "|bias|");
    let mut row = y + 18.0;
    let mut prev = 0.0;
    for (i, &l) in levels.iter().enumerate() {
        let _ = writeln!(svg.out, r#"<rect x="{x:.6}" y="{:.6}" width="10" height="10" fill="{}"/>"#, row - 9.0, PALETTE[i % PALETTE.len()]);
        svg.text(x + 16.0, row, "start", 11, &format!("{prev} - {l}"));
        prev = l;
        row += 16.0;
    }
    let _ = writeln!(svg.out, r#"<rect x="{x:.6}" y="{:.6}" width="10" height="10" fill="{HIGH_COLOR}"/>"#, row - 9.0);
    svg.text(x + 16.0, row, "start", 11, &format!("> {prev}"));
    if prepost {
        row += 24.0;
        let _ = writeln!(svg.out, r##"<circle cx="{:.6}" cy="{:.6}" r="4" fill="#777777"/>"##, x + 5.0, row - 4.0);
        svg.text(x + 16.0, row, "start", 11, "pre-match");
        row += 16.0;
        let _ = writeln!(
            svg.out,
            r##"<rect x="{x:.6}" y="{:.6}" width="8" height="8" fill="none" stroke="#777777" stroke-width="1.5"/>"##,
            row - 8.0
        );
        svg.text(x + 16.0, row, "start", 11, "post-match");
    }
}

/// Places labels on a vertical ladder, skipping rungs that collide with
/// labels already placed.
struct Labeler {
    boxes: Vec<(f64, f64, f64, f64)>,
}

impl Labeler {
    fn place(&mut self, svg: &mut Svg, x: f64, y: f64, text: &str) {
        let w = 6.2 * text.chars().count() as f64;
        let h = 11.0;
        let mut chosen = y;
        for rung in 0..9 {
            let offset = ((rung + 1) / 2) as f64 * 12.0 * if rung % 2 == 1 { -1.0 } else { 1.0 };
            let cy = y + offset;
            let free = self.boxes.iter().all(|&(bx, by, bw, bh)| x + w < bx || bx + bw < x || cy < by - bh || by < cy - h);
            if free {
                chosen = cy;
                break;
            }
        }
        self.boxes.push((x, chosen, w, h));
        svg.text(x, chosen, "start", 10, text);
    }
}

fn plottable<'a>(rows: &'a [BalanceRow], config: &PlotConfig) -> Vec<&'a BalanceRow> {
    rows.iter().filter(|r| r.is_plottable() && (config.include_scores || !r.is_score)).collect()
}

/// Renders one plot. `post_rows` is required for the pre/post variant and
/// ignored otherwise.
pub fn render(rows: &[BalanceRow], config: &PlotConfig, post_rows: Option<&[BalanceRow]>) -> Result<String, VizError> {
    config.validate()?;
    let points = plottable(rows, config);
    if points.is_empty() {
        return Err(VizError::EmptyInput);
    }
    match config.variant {
        PlotVariant::Love => Ok(render_love(&points, config)),
        PlotVariant::JointvipAbs | PlotVariant::JointvipSigned => Ok(render_jointvip(&points, config, None)),
        PlotVariant::JointvipPrepost => {
            let post = post_rows.ok_or(VizError::MissingPostRows)?;
            let paired = points
                .iter()
                .map(|r| post.iter().find(|p| p.variable == r.variable).ok_or_else(|| VizError::UnmatchedVariable(r.variable.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(render_jointvip(&points, config, Some(&paired)))
        }
    }
}

fn render_jointvip(points: &[&BalanceRow], config: &PlotConfig, post: Option<&[&BalanceRow]>) -> String {
    let signed = config.variant == PlotVariant::JointvipSigned;
    let coord = |r: &BalanceRow| if signed { (r.ovb_smd, r.pilot_corr) } else { (r.ovb_smd.abs(), r.pilot_corr.abs()) };
    let mut xs: Vec<f64> = points.iter().map(|r| coord(r).0).collect();
    if let Some(post) = post {
        xs.extend(post.iter().map(|r| r.ovb_smd.abs()).filter(|v| v.is_finite()));
    }
    let x = axis_limits(xs.into_iter(), signed, None);
    let y = axis_limits(points.iter().map(|r| coord(r).1), signed, Some(1.0));
    let (w, h) = (config.width_px as f64, config.height_px as f64);
    let f = Frame { left: 70.0, top: 40.0, width: w - 70.0 - 170.0, height: h - 40.0 - 60.0, x, y };
    let mut svg = Svg::new(config.width_px, config.height_px);
    let title = match config.variant {
        PlotVariant::JointvipSigned => "jointVIP (signed)",
        PlotVariant::JointvipPrepost => "jointVIP: pre and post match",
        _ => "jointVIP",
    };
    svg.text(f.left + f.width / 2.0, 24.0, "middle", 15, title);
    let xlabel = if signed { "OVB-based SMD" } else { "|OVB-based SMD|" };
    let ylabel = if signed { "pilot outcome correlation" } else { "|pilot outcome correlation|" };
    axes(&mut svg, &f, xlabel, ylabel, true);

    // equal-bias hyperbolas, mirrored into every quadrant the axes show
    for (i, &level) in config.bias_levels.iter().enumerate() {
        let quadrants: &[(f64, f64)] = if signed { &[(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] } else { &[(1.0, 1.0)] };
        for &(sx, sy) in quadrants {
            let xmax = if sx > 0.0 { f.x.1 } else { -f.x.0 };
            let ymax = if sy > 0.0 { f.y.1 } else { -f.y.0 };
            if xmax <= 0.0 || ymax <= 0.0 {
                continue;
            }
            let lo = level / ymax;
            let Ok(curve) = bias_curve(level, lo.min(xmax * 0.999_999), xmax) else { continue };
            if curve.len() < 2 {
                continue;
            }
            let mut d = String::new();
            for (k, (cx, cy)) in curve.iter().enumerate() {
                let _ = write!(d, "{}{:.6},{:.6}", if k == 0 { "" } else { " " }, f.px(sx * cx), f.py(sy * cy));
            }
            let _ = writeln!(
                svg.out,
                r#"<polyline class="curve" points="{d}" fill="none" stroke="{}" stroke-width="1" stroke-dasharray="4 3"/>"#,
                PALETTE[i % PALETTE.len()]
            );
        }
    }

    if let Some(post) = post {
        for (r, p) in points.iter().zip(post) {
            if !p.ovb_smd.is_finite() {
                continue;
            }
            let (x0, y0) = (f.px(r.ovb_smd.abs()), f.py(r.pilot_corr.abs()));
            let (x1, y1) = (f.px(p.ovb_smd.abs()), f.py(r.pilot_corr.abs()));
            svg.line(x0, y0, x1, y1, r##"stroke="#999999" stroke-width="0.8""##);
        }
    }
    for r in points {
        let (cx, cy) = coord(r);
        let _ = writeln!(
            svg.out,
            r#"<circle class="marker" cx="{:.6}" cy="{:.6}" r="4" fill="{}"><title>{}</title></circle>"#,
            f.px(cx),
            f.py(cy),
            color(&config.bias_levels, r.bias),
            escape(&r.variable)
        );
    }
    if let Some(post) = post {
        for (r, p) in points.iter().zip(post) {
            if !p.ovb_smd.is_finite() {
                continue;
            }
            let (cx, cy) = (f.px(p.ovb_smd.abs()), f.py(r.pilot_corr.abs()));
            let _ = writeln!(
                svg.out,
                r#"<rect class="marker-post" x="{:.6}" y="{:.6}" width="8" height="8" fill="none" stroke="{}" stroke-width="1.5"><title>{}</title></rect>"#,
                cx - 4.0,
                cy - 4.0,
                color(&config.bias_levels, p.bias),
                escape(&p.variable)
            );
        }
    }
    let mut labels = Labeler { boxes: Vec::new() };
    for r in points.iter().take(config.label_top_k) {
        let (cx, cy) = coord(r);
        labels.place(&mut svg, f.px(cx) + 6.0, f.py(cy) - 4.0, &r.variable);
    }
    legend(&mut svg, &config.bias_levels, f.left + f.width + 20.0, f.top + 10.0, post.is_some());
    svg.finish()
}

fn render_love(points: &[&BalanceRow], config: &PlotConfig) -> String {
    let mut sorted: Vec<&BalanceRow> = points.to_vec();
    sorted.sort_by(|a, b| b.pooled_smd.abs().total_cmp(&a.pooled_smd.abs()).then_with(|| a.variable.cmp(&b.variable)));
    let x = axis_limits(sorted.iter().map(|r| r.pooled_smd.abs()).filter(|v| v.is_finite()), false, None);
    let n = sorted.len() as f64;
    let (w, h) = (config.width_px as f64, config.height_px as f64);
    let f = Frame { left: 200.0, top: 40.0, width: w - 200.0 - 170.0, height: h - 40.0 - 60.0, x, y: (0.0, n) };
    let mut svg = Svg::new(config.width_px, config.height_px);
    svg.text(f.left + f.width / 2.0, 24.0, "middle", 15, "Love plot");
    axes(&mut svg, &f, "|pooled SMD|", "", false);
    if f.x.1 >= 0.1 {
        svg.line(f.px(0.1), f.top, f.px(0.1), f.top + f.height, r##"stroke="#999999" stroke-width="1" stroke-dasharray="4 3""##);
    }
    for (i, r) in sorted.iter().enumerate() {
        let cy = f.py(n - i as f64 - 0.5);
        let v = r.pooled_smd.abs();
        if v.is_finite() {
            let _ = writeln!(
                svg.out,
                r#"<circle class="marker" cx="{:.6}" cy="{:.6}" r="4" fill="{}"><title>{}</title></circle>"#,
                f.px(v),
                cy,
                color(&config.bias_levels, r.bias),
                escape(&r.variable)
            );
        }
        if i < config.label_top_k || sorted.len() <= 40 {
            svg.text(f.left - 6.0, cy + 3.5, "end", 10, &r.variable);
        }
    }
    legend(&mut svg, &config.bias_levels, f.left + f.width + 20.0, f.top + 10.0, false);
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, smd: f64, corr: f64) -> BalanceRow {
        BalanceRow {
            variable: name.to_string(),
            is_score: false,
            mean_treated: 0.0,
            mean_control: 0.0,
            delta: 0.0,
            pilot_sd: 1.0,
            pilot_outcome_sd: 1.0,
            ovb_smd: smd,
            pooled_smd: smd,
            pilot_corr: corr,
            beta: corr,
            bias: smd * corr,
            flag: None,
        }
    }

    #[test]
    fn curve_algebra_and_clipping() {
        let c = bias_curve(0.02, 0.01, 0.5).unwrap();
        assert_eq!(c.len(), CURVE_POINTS);
        assert_eq!(c[0], (0.02, 1.0));
        assert!(c.iter().all(|(s, r)| (s * r - 0.02).abs() < 1e-9 && *r <= 1.0));
        let at = bias_curve(0.02, 0.2, 0.4).unwrap();
        assert!((at[0].1 - 0.1).abs() < 1e-15);
        let edge = bias_curve(0.01, 0.01, 1.0).unwrap();
        assert_eq!(edge[0], (0.01, 1.0));
        assert!(bias_curve(0.0, 0.1, 1.0).is_err());
        assert!(bias_curve(0.1, 0.5, 0.2).is_err());
    }

    #[test]
    fn single_marker_maps_linearly() {
        let svg = render(&[row("x", 0.5, 0.2)], &PlotConfig::new(PlotVariant::JointvipAbs), None).unwrap();
        assert_eq!(svg.matches(r#"class="marker""#).count(), 1);
        // x axis [0, 0.55], y axis [0, 0.25]; plot area 520 x 460 at (70, 40)
        let cx = 70.0 + 0.5 / 0.55 * 520.0;
        let cy = 40.0 + 460.0 - 0.2 / 0.25 * 460.0;
        assert!(svg.contains(&format!(r#"cx="{cx:.6}" cy="{cy:.6}""#)), "{svg}");
    }

    #[test]
    fn deterministic_and_complete() {
        let mut rows: Vec<BalanceRow> = (0..8).map(|i| row(&format!("v{i}"), 0.05 * i as f64 - 0.2, 0.3 - 0.07 * i as f64)).collect();
        rows[3].flag = Some(crate::balance::RowFlag::ZeroPilotSd);
        for variant in [PlotVariant::Love, PlotVariant::JointvipAbs, PlotVariant::JointvipSigned] {
            let cfg = PlotConfig::new(variant);
            let a = render(&rows, &cfg, None).unwrap();
            assert_eq!(a, render(&rows, &cfg, None).unwrap());
            assert_eq!(a.matches(r#"class="marker""#).count(), 7);
        }
        let cfg = PlotConfig::new(PlotVariant::JointvipPrepost);
        assert_eq!(render(&rows, &cfg, None), Err(VizError::MissingPostRows));
        let post: Vec<BalanceRow> = rows.iter().map(|r| BalanceRow { ovb_smd: r.ovb_smd / 10.0, ..r.clone() }).collect();
        let svg = render(&rows, &cfg, Some(&post)).unwrap();
        assert_eq!(svg.matches(r#"class="marker-post""#).count(), 7);
    }

    #[test]
    fn empty_and_bad_levels() {
        let cfg = PlotConfig::new(PlotVariant::JointvipAbs);
        assert_eq!(render(&[], &cfg, None), Err(VizError::EmptyInput));
        let bad = PlotConfig { bias_levels: vec![0.02, 0.01], ..cfg };
        assert_eq!(render(&[row("x", 0.1, 0.1)], &bad, None), Err(VizError::InvalidLevels));
    }

    #[test]
    fn color_buckets() {
        let levels = DEFAULT_BIAS_LEVELS;
        assert_eq!(bucket(&levels, 0.004), Some(0));
        assert_eq!(bucket(&levels, -0.015), Some(2));
        assert_eq!(bucket(&levels, 0.2), None);
    }
}
