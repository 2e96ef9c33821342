//! Minimal native SVG output: a log-log rate curve with envelope overlay and
//! histograms of coupler statistics. No drawing dependencies.

use mfnc_core::stats::{rate_envelope, RateStudyResult};
use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 440.0;
const MARGIN: f64 = 60.0;

fn map(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
}

fn axes(svg: &mut String, x_label: &str, y_label: &str) {
    let _ = write!(
        svg,
        r#"<rect width="{W}" height="{H}" fill="white"/>
<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>
<line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>
<text x="{cx}" y="{ly}" text-anchor="middle" font-size="13">{x_label}</text>
<text x="16" y="{cy}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {cy})">{y_label}</text>
"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN / 2.0,
        t = MARGIN / 2.0,
        cx = W / 2.0,
        ly = H - 16.0,
        cy = H / 2.0,
    );
}

/// Log-log plot of mean sup-distance vs N with the fitted envelope
/// C (ln N)^{1/5} N^{-1/10} overlaid as a dashed line.
pub fn rate_plot(result: &RateStudyResult) -> String {
    let pts: Vec<(f64, f64)> = result
        .records
        .iter()
        .map(|r| ((r.n as f64).ln(), r.mean.max(1e-300).ln()))
        .collect();
    let env: Vec<(f64, f64)> = result
        .records
        .iter()
        .map(|r| ((r.n as f64).ln(), (result.fit.c_hat * rate_envelope(r.n)).ln()))
        .collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().chain(&env).map(|p| p.1).collect();
    let (x_lo, x_hi) = bounds(&xs);
    let (y_lo, y_hi) = bounds(&ys);

    let mut svg = String::new();
    let _ = write!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">"#);
    axes(&mut svg, "ln N", "ln mean sup-distance");
    for (series, style) in [(&pts, "stroke=\"steelblue\""), (&env, "stroke=\"gray\" stroke-dasharray=\"6 4\"")] {
        let line_pts: String = series
            .iter()
            .map(|&(x, y)| {
                format!(
                    "{:.2},{:.2} ",
                    map(x, x_lo, x_hi, MARGIN, W - MARGIN / 2.0),
                    map(y, y_lo, y_hi, H - MARGIN, MARGIN / 2.0)
                )
            })
            .collect();
        let _ = write!(svg, r#"<polyline points="{}" fill="none" {} stroke-width="2"/>"#, line_pts.trim(), style);
    }
    for &(x, y) in &pts {
        let _ = write!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="steelblue"/>"#,
            map(x, x_lo, x_hi, MARGIN, W - MARGIN / 2.0),
            map(y, y_lo, y_hi, H - MARGIN, MARGIN / 2.0)
        );
    }
    let slope = result
        .fit
        .slope
        .map(|s| format!("slope {s:.4}"))
        .unwrap_or_else(|| "slope undefined".into());
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" font-size="12">C = {:.4}, {}</text></svg>"#,
        MARGIN + 8.0,
        MARGIN / 2.0 + 14.0,
        result.fit.c_hat,
        slope
    );
    svg
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

/// One histogram panel per (label, samples) group, stacked vertically.
pub fn histogram_plot(groups: &[(String, Vec<f64>)]) -> String {
    let panel_h = 160.0;
    let total_h = panel_h * groups.len() as f64 + MARGIN;
    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{total_h}"><rect width="{W}" height="{total_h}" fill="white"/>"#
    );
    let bins = 24usize;
    for (gi, (label, samples)) in groups.iter().enumerate() {
        let top = gi as f64 * panel_h + 20.0;
        let (lo, hi) = bounds(samples);
        let mut counts = vec![0usize; bins];
        for &s in samples {
            let b = (((s - lo) / (hi - lo)) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let peak = *counts.iter().max().unwrap_or(&1) as f64;
        let bw = (W - 2.0 * MARGIN) / bins as f64;
        for (i, &c) in counts.iter().enumerate() {
            let bh = c as f64 / peak * (panel_h - 50.0);
            let _ = write!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="steelblue"/>"#,
                MARGIN + i as f64 * bw,
                top + (panel_h - 50.0) - bh,
                bw - 1.0,
                bh
            );
        }
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-size="12">{} (range {:.3} to {:.3})</text>"#,
            MARGIN,
            top - 6.0,
            label,
            lo,
            hi
        );
    }
    svg.push_str("</svg>");
    svg
}
