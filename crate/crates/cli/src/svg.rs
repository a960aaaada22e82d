//! Minimal SVG line plots with a logarithmic y axis.

use std::fmt::Write as _;

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f5fa8", "#c8501e", "#2e8b57", "#7a3b9a"];

/// Plots `log₁₀ y`; nonpositive values are skipped.
pub fn log_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.x.iter().zip(s.y).filter(|(_, y)| **y > 0.0).map(|(x, y)| (*x, y.log10())))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    y0 = y0.floor();
    y1 = y1.ceil().max(y0 + 1.0);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title)).unwrap();
    writeln!(
        out,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    )
    .unwrap();
    let decades = (y1 - y0) as i64;
    let stride = (decades / 8).max(1);
    let mut d = y0 as i64;
    while d <= y1 as i64 {
        let y = sy(d as f64);
        writeln!(out, r##"<line x1="{PAD}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, W - PAD).unwrap();
        writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, PAD - 4.0, y + 4.0).unwrap();
        d += stride;
    }
    for k in 0..=4 {
        let x = x0 + (x1 - x0) * k as f64 / 4.0;
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(x),
            H - PAD + 16.0,
            trim(x)
        )
        .unwrap();
    }
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel)).unwrap();
    writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    )
    .unwrap();
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = s
            .x
            .iter()
            .zip(s.y)
            .filter(|(_, y)| **y > 0.0)
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(y.log10())))
            .collect();
        if !path.is_empty() {
            writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" ")).unwrap();
        }
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            W - PAD - 150.0,
            PAD + 16.0 + 16.0 * k as f64,
            escape(s.label)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn trim(x: f64) -> String {
    let s = format!("{x:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
