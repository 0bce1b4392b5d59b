//! Key-value report text, plot-data CSVs and minimal SVG plots.

use std::fmt::{Display, Write as _};
use std::path::Path;

use centerprint::io::write_text;
use centerprint::Result;

/// Ordered `key=value` lines.
#[derive(Debug, Default)]
pub struct KeyValues {
    lines: Vec<(String, String)>,
}

impl KeyValues {
    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn push_opt(&mut self, key: impl Into<String>, value: Option<impl Display>) {
        match value {
            Some(v) => self.push(key, v),
            None => self.push(key, "none"),
        }
    }

    pub fn render(&self) -> String {
        self.lines.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k}={v}");
            s
        })
    }
}

/// Columns of equal length with a header row.
pub struct Table {
    pub header: Vec<&'static str>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        let rows = self.columns.first().map_or(0, Vec::len);
        for i in 0..rows {
            let row: Vec<String> = self.columns.iter().map(|c| format!("{}", c[i])).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv())
    }
}

/// Plot of column 0 against the data column (markers) and an optional
/// model column (line).
pub fn svg_plot(title: &str, t: &Table, data: usize, model: Option<usize>, log_y: bool) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let xs = &t.columns[0];
    let ty = |v: f64| if log_y { v.max(0.5).log10() } else { v };
    let mut ys: Vec<f64> = t.columns[data].iter().map(|&v| ty(v)).collect();
    if let Some(m) = model {
        ys.extend(t.columns[m].iter().map(|&v| ty(v)));
    }
    let finite = |v: &&f64| v.is_finite();
    let (x0, x1) = bounds(xs.iter().filter(finite));
    let (y0, y1) = bounds(ys.iter().filter(finite));
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (ty(y) - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <rect x=\"{M}\" y=\"{M}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W / 2.0,
        W - 2.0 * M,
        H - 2.0 * M
    );
    let _ = writeln!(
        s,
        "<text x=\"{M}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}: {x0:.4} .. {x1:.4}</text>",
        H - 15.0,
        t.header[0]
    );
    for (x, y) in xs.iter().zip(&t.columns[data]) {
        if x.is_finite() && y.is_finite() {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"steelblue\"/>", px(*x), py(*y));
        }
    }
    if let Some(m) = model {
        let pts: Vec<String> = xs
            .iter()
            .zip(&t.columns[m])
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"firebrick\" stroke-width=\"1.5\"/>",
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

fn bounds<'a>(v: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= 0.0 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
