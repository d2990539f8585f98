//! Minimal SVG line charts of metrics columns against `iter`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

fn read_series(csv_path: &Path, columns: &[&str]) -> Result<Vec<Series>> {
    let mut rdr = csv::Reader::from_path(csv_path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::contract(format!(
                "column `{name}` not found; available columns: {}",
                headers.join(", ")
            ))
        })
    };
    let x_col = find("iter")?;
    let cols = columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let mut series: Vec<Series> = columns
        .iter()
        .map(|c| Series {
            name: c.to_string(),
            points: Vec::new(),
        })
        .collect();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| Error::contract(format!("bad number in `{}`: {e}", headers[i])))
        };
        let x = num(x_col)?;
        for (s, &c) in series.iter_mut().zip(&cols) {
            s.points.push((x, num(c)?));
        }
    }
    Ok(series)
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Renders the chart as an SVG string. Output is byte-stable for equal input.
pub fn render_svg(csv_path: &Path, columns: &[&str]) -> Result<String> {
    if columns.is_empty() {
        return Err(Error::contract("no columns selected"));
    }
    let series = read_series(csv_path, columns)?;
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = span(all().map(|p| p.0));
    let (y0, y1) = span(all().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{l:.2},{t:.2} L{l:.2},{b:.2} L{r:.2},{b:.2}" fill="none" stroke="black"/>"#
    );
    let label = |s: &mut String, x: f64, y: f64, anchor: &str, text: String| {
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="monospace" font-size="11" text-anchor="{anchor}">{text}</text>"#
        );
    };
    label(&mut s, l, b + 16.0, "start", format!("{x0}"));
    label(&mut s, r, b + 16.0, "end", format!("{x1}"));
    label(&mut s, (l + r) / 2.0, b + 32.0, "middle", "iter".into());
    label(&mut s, l - 4.0, b, "end", format!("{y0:.4}"));
    label(&mut s, l - 4.0, t + 4.0, "end", format!("{y1:.4}"));
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = t + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
            r - 120.0,
            ly - 4.0,
            r - 100.0,
            ly - 4.0
        );
        label(&mut s, r - 96.0, ly, "start", ser.name.clone());
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot(csv_path: &Path, columns: &[&str], out_path: &Path) -> Result<()> {
    let svg = render_svg(csv_path, columns)?;
    std::fs::write(out_path, svg).map_err(|e| Error::io(out_path, e))
}
