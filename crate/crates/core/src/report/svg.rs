use std::fmt::Write;

use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// A named polyline; `start` is the x index of its first value.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub start: usize,
    pub values: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> Result<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Data("nothing finite to plot".into()));
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 1.0 };
    Ok((lo - pad, hi + pad))
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    );
}

fn y_axis(out: &mut String, lo: f64, hi: f64, y: impl Fn(f64) -> f64) {
    let _ = writeln!(
        out,
        "<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>",
        HEIGHT - MARGIN
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{v:.2}</text>",
            MARGIN - 4.0,
            y(v) + 3.0
        );
    }
}

/// Line chart of several series sharing an integer x axis, e.g. the observed
/// history, the true continuation and each model's forecast.
pub fn forecast_svg(title: &str, series: &[Series]) -> Result<String> {
    let n = series.iter().map(|s| s.start + s.values.len()).max().unwrap_or(0);
    if n < 2 {
        return Err(Error::Data("a forecast plot needs at least two x positions".into()));
    }
    let (lo, hi) = range(series.iter().flat_map(|s| s.values.iter().copied()))?;
    let x = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (n - 1) as f64;
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);

    let mut out = String::new();
    header(&mut out, title);
    y_axis(&mut out, lo, hi, y);
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x(s.start + i), y(v)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            WIDTH - MARGIN - 140.0,
            MARGIN + 14.0 * k as f64,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Five-number summary with linearly interpolated quartiles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("box statistics need finite values".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let i = pos.floor() as usize;
            let j = (i + 1).min(v.len() - 1);
            v[i] + (pos - i as f64) * (v[j] - v[i])
        };
        Ok(BoxStats {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

/// One box per group, whiskers at the extremes.
pub fn box_plot_svg(title: &str, groups: &[(String, Vec<f64>)]) -> Result<String> {
    if groups.is_empty() {
        return Err(Error::Data("a box plot needs at least one group".into()));
    }
    let stats = groups
        .iter()
        .map(|(_, v)| BoxStats::from_values(v))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = range(stats.iter().flat_map(|s| [s.min, s.max]))?;
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);
    let slot = (WIDTH - 2.0 * MARGIN) / groups.len() as f64;

    let mut out = String::new();
    header(&mut out, title);
    y_axis(&mut out, lo, hi, y);
    for (k, ((name, _), s)) in groups.iter().zip(&stats).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let cx = MARGIN + slot * (k as f64 + 0.5);
        let half = slot * 0.25;
        let _ = writeln!(
            out,
            "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            y(s.min),
            y(s.max)
        );
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.5\" stroke=\"black\"/>",
            cx - half,
            y(s.q3),
            2.0 * half,
            (y(s.q1) - y(s.q3)).max(0.5)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>",
            cx - half,
            y(s.median),
            cx + half,
            y(s.median)
        );
        let _ = writeln!(
            out,
            "<text x=\"{cx:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            HEIGHT - MARGIN + 16.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
