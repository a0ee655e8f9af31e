//! Occlusion sensitivity and per-patient dynamic survival curves, with SVG
//! rendering.

use std::fmt::Write as _;

use tensor::Tensor;

use crate::cox::{dynamic_survival, BaselineHazard};
use crate::data::{months_to_standard, Image, ImageSequence};
use crate::error::{Error, Result};
use crate::image::prepare_image;
use crate::model::Model;

pub const DEFAULT_REGION_SIDE: usize = 8;
pub const DEFAULT_FILL: f64 = 0.0;

/// Sensitivities of one visit on the occlusion region grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    pub visit: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub region_side: usize,
    pub fill: f64,
    pub values: Vec<f64>,
}

impl SensitivityMap {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.grid_cols + c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occlusion {
    pub baseline_risk: f64,
    pub maps: Vec<SensitivityMap>,
    /// Forward evaluations performed, the baseline included.
    pub probes: usize,
}

/// Replaces each `region_side` square of each of the first `visits` images in
/// turn with `fill` and records `|r' - r|` (or `r' - r` when `signed`).
/// Other visits keep their original images during every probe.
pub fn occlusion_sensitivity(
    model: &Model,
    seq: &ImageSequence,
    visits: usize,
    region_side: usize,
    fill: f64,
    signed: bool,
) -> Result<Occlusion> {
    if visits == 0 || visits > seq.len() {
        return Err(Error::Input(format!("landmark uses {visits} visits of {}", seq.len())));
    }
    let (rows, cols) = (seq.images[0].rows(), seq.images[0].cols());
    if region_side == 0 || rows % region_side != 0 || cols % region_side != 0 {
        return Err(Error::Input(format!(
            "region side {region_side} does not divide the {rows}x{cols} image"
        )));
    }
    let p = model.config.patches;
    let embeddings = seq.images[..visits]
        .iter()
        .map(|im| model.embed(&prepare_image(im, p)?))
        .collect::<Result<Vec<Tensor>>>()?;
    let baseline = model.risk_from_embeddings(&embeddings, &seq.covariates)?;
    let mut probes = 1;

    let (grid_rows, grid_cols) = (rows / region_side, cols / region_side);
    let mut maps = Vec::with_capacity(visits);
    for j in 0..visits {
        let mut values = Vec::with_capacity(grid_rows * grid_cols);
        for gr in 0..grid_rows {
            for gc in 0..grid_cols {
                let mut im: Image = seq.images[j].clone();
                for r in gr * region_side..(gr + 1) * region_side {
                    for c in gc * region_side..(gc + 1) * region_side {
                        im.set(r, c, fill);
                    }
                }
                let mut probe = embeddings.clone();
                probe[j] = model.embed(&prepare_image(&im, p)?)?;
                let r = model.risk_from_embeddings(&probe, &seq.covariates)?;
                probes += 1;
                values.push(if signed { r - baseline } else { (r - baseline).abs() });
            }
        }
        maps.push(SensitivityMap { visit: j, grid_rows, grid_cols, region_side, fill, values });
    }
    Ok(Occlusion { baseline_risk: baseline, maps, probes })
}

/// CSV `visit, region_row, region_col, sensitivity`.
pub fn write_sensitivity_csv<W: std::io::Write>(maps: &[SensitivityMap], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["visit", "region_row", "region_col", "sensitivity"])?;
    for m in maps {
        for r in 0..m.grid_rows {
            for c in 0..m.grid_cols {
                w.write_record([m.visit.to_string(), r.to_string(), c.to_string(), m.get(r, c).to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<sensitivity csv>", e))?;
    Ok(())
}

/// Conditional survival at `t* + dt` for each `dt` on `grid_months`.
pub fn dynamic_survival_curve(
    risk: f64,
    table: &BaselineHazard,
    t_star_months: f64,
    grid_months: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if grid_months.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Input("increment grid must be sorted ascending".into()));
    }
    let t_star = months_to_standard(t_star_months);
    grid_months
        .iter()
        .map(|&dt| Ok((dt, dynamic_survival(risk, t_star, months_to_standard(dt), table)?)))
        .collect()
}

/// CSV `dt_months, probability`.
pub fn write_curve_csv<W: std::io::Write>(curve: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dt_months", "probability"])?;
    for (dt, p) in curve {
        w.write_record([dt.to_string(), p.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<curve csv>", e))?;
    Ok(())
}

/// Blue (0) to red (1).
fn ramp(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs()) * 0.35).round() as u8;
    (r, g, b)
}

/// Maps `v` into [0, 1] by min-max; a zero range maps to 0.5.
pub fn normalize(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}

const PIXEL: usize = 6;

/// SVG of `underlay` in grayscale with the map overlaid as translucent
/// colored regions. `range` fixes the normalization (min, max); `None` uses
/// this map's own range.
pub fn render_heatmap(map: &SensitivityMap, underlay: &Image, range: Option<(f64, f64)>) -> Result<String> {
    if underlay.rows() != map.grid_rows * map.region_side || underlay.cols() != map.grid_cols * map.region_side {
        return Err(Error::Input("underlay does not match the sensitivity grid".into()));
    }
    let (lo, hi) = range.unwrap_or_else(|| {
        let lo = map.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    });
    let (w, h) = (underlay.cols() * PIXEL, underlay.rows() * PIXEL);
    let plo = underlay.pixels().iter().copied().fold(f64::INFINITY, f64::min);
    let phi = underlay.pixels().iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" shape-rendering="crispEdges">"#
    );
    let _ = writeln!(s, r#"<title>occlusion sensitivity, visit {}</title>"#, map.visit);
    let _ = writeln!(s, r#"<g id="underlay">"#);
    for r in 0..underlay.rows() {
        for c in 0..underlay.cols() {
            let g = (255.0 * normalize(underlay.get(r, c), plo, phi)).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{PIXEL}" height="{PIXEL}" fill="rgb({g},{g},{g})"/>"#,
                c * PIXEL,
                r * PIXEL
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="sensitivity" fill-opacity="0.55">"#);
    let side = map.region_side * PIXEL;
    for r in 0..map.grid_rows {
        for c in 0..map.grid_cols {
            let (cr, cg, cb) = ramp(normalize(map.get(r, c), lo, hi));
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{side}" height="{side}" fill="rgb({cr},{cg},{cb})" stroke="white" stroke-opacity="0.3" stroke-width="1"/>"#,
                c * side,
                r * side
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

/// Line plot of a survival curve: `dt` in months against probability.
pub fn render_curve(curve: &[(f64, f64)], title: &str) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let max_dt = curve.iter().map(|p| p.0).fold(0.0, f64::max).max(1.0);
    let x = |dt: f64| m + (w - 2.0 * m) * dt / max_dt;
    let y = |p: f64| h - m - (h - 2.0 * m) * p;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{:.2} {:.2} L{:.2} {:.2} L{:.2} {:.2}" fill="none" stroke="black"/>"#,
        m,
        m,
        m,
        h - m,
        w - m,
        h - m
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{tick:.2}</text>"#,
            m - 6.0,
            y(tick) + 4.0
        );
    }
    for &(dt, _) in curve {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{dt}</text>"#,
            x(dt),
            h - m + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">months after landmark</text>"#,
        w / 2.0,
        h - 8.0
    );
    let points: Vec<String> = curve.iter().map(|&(dt, p)| format!("{:.2},{:.2}", x(dt), y(p))).collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="rgb(200,30,30)" stroke-width="2"/>"#,
        points.join(" ")
    );
    for &(dt, p) in curve {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="rgb(200,30,30)"/>"#, x(dt), y(p));
    }
    let _ = writeln!(s, "</svg>");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
