//! Episode-log reading, cross-seed statistics and a minimal SVG line chart.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::trainer::{EpisodeRecord, UpdateKind, EPISODE_LOG_HEADER};

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn parse_episode_log(text: &str) -> Result<Vec<EpisodeRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(EPISODE_LOG_HEADER) {
        return Err(Error::InvalidInput("not an episode log (header mismatch)".into()));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::InvalidInput(format!("episode log row {}: `{line}`", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        let opt = |s: &str| if s.trim().is_empty() { Ok(None) } else { num(s).map(Some) };
        out.push(EpisodeRecord {
            episode: f[0].trim().parse().map_err(|_| bad())?,
            ret: num(f[1])?,
            ma50: num(f[2])?,
            kind: match f[3].trim() {
                "mc" => UpdateKind::Mc,
                "is" => UpdateKind::Is,
                _ => return Err(bad()),
            },
            sr_fit_mse: opt(f[4])?,
            wall_ms: opt(f[5])?,
        });
    }
    Ok(out)
}

/// Per-index mean and std across series, truncated to the shortest one.
pub fn band(series: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let n = series.iter().map(Vec::len).min().unwrap_or(0);
    (0..n)
        .map(|i| mean_std(&series.iter().map(|s| s[i]).collect::<Vec<_>>()))
        .collect()
}

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Line chart of the cross-seed mean with a shaded ±1 std band.
pub fn render_svg(series: &[Vec<f64>], title: &str) -> Result<String> {
    let b = band(series);
    if b.is_empty() {
        return Err(Error::InvalidInput("nothing to plot".into()));
    }
    if b.iter().any(|(m, s)| !m.is_finite() || !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite values in series".into()));
    }
    let lo = b.iter().map(|(m, s)| m - s).fold(f64::INFINITY, f64::min);
    let hi = b.iter().map(|(m, s)| m + s).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi - lo < 1e-9 { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
    let n = b.len();
    let px = |i: usize| LEFT + (W - LEFT - RIGHT) * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let py = |v: f64| TOP + (H - TOP - BOTTOM) * (hi - v) / (hi - lo);

    let mut upper = String::new();
    let mut lower = String::new();
    let mut mean = String::new();
    for (i, (m, s)) in b.iter().enumerate() {
        let _ = write!(upper, "{:.2},{:.2} ", px(i), py(m + s));
        let _ = write!(mean, "{:.2},{:.2} ", px(i), py(*m));
    }
    for (i, (m, s)) in b.iter().enumerate().rev() {
        let _ = write!(lower, "{:.2},{:.2} ", px(i), py(m - s));
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<polygon class="band" points="{}{}" fill="steelblue" fill-opacity="0.25" stroke="none"/>"#,
        upper,
        lower.trim_end()
    );
    let _ = writeln!(
        svg,
        r#"<polyline class="mean" points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
        mean.trim_end()
    );
    // axes and ticks
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(svg, r#"<path d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = py(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            x0 - 7.0,
            y + 4.0,
            tick(v)
        );
        let i = (n - 1) * k / 4;
        let x = px(i);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            y1 + 4.0,
            y1 + 18.0,
            i + 1
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">episode</text>"#, (x0 + x1) / 2.0, H - 12.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">MA-50 return ({} seeds)</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        series.len()
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
