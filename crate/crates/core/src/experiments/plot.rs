//! Log-log SVG figures from a result file. Written by hand so plotting
//! needs no dependency.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{read_results_path, ResultRow};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Reference KL against `n`, with a slope −1 guide.
    KlVsN,
    /// `½ KLvar / KL` against `n`.
    RatioVsN,
    /// `½ KLvar / KL` against the reference KL.
    RatioVsKl,
}

impl PlotKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlotKind::KlVsN => "kl_vs_n",
            PlotKind::RatioVsN => "ratio_vs_n",
            PlotKind::RatioVsKl => "ratio_vs_kl",
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl_vs_n" => Ok(PlotKind::KlVsN),
            "ratio_vs_n" => Ok(PlotKind::RatioVsN),
            "ratio_vs_kl" => Ok(PlotKind::RatioVsKl),
            _ => Err(Error::InvalidArgument(format!(
                "unknown plot kind {s:?} (expected kl_vs_n, ratio_vs_n or ratio_vs_kl)"
            ))),
        }
    }
}

/// Reference KL per `(p, n, seed)`: the chain route when it produced a
/// finite value, otherwise direct importance sampling. Value and SE.
pub fn reference_kl_by_cell(rows: &[ResultRow]) -> BTreeMap<(usize, usize, u64), (f64, f64)> {
    let mut out = BTreeMap::new();
    for pref in ["kl_direct", "kl_via_chain"] {
        for r in rows.iter().filter(|r| r.estimator == pref && r.value.is_finite()) {
            out.insert((r.p, r.n, r.seed), (r.value, r.std_error.unwrap_or(0.0)));
        }
    }
    out
}

/// Least-squares slope of `log y` on `log x`. `None` with fewer than two
/// distinct positive points.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

struct Series {
    p: usize,
    points: Vec<(f64, f64)>,
    /// Mean of `y` per distinct `x`, sorted by `x`.
    means: Vec<(f64, f64)>,
}

fn series(rows: &[ResultRow], kind: PlotKind) -> Vec<Series> {
    let reference = reference_kl_by_cell(rows);
    let klvar: BTreeMap<_, _> = rows
        .iter()
        .filter(|r| r.estimator == "klvar" && r.value.is_finite())
        .map(|r| ((r.p, r.n, r.seed), r.value))
        .collect();
    let mut by_p: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for (&(p, n, seed), &(kl, _)) in &reference {
        let point = match kind {
            PlotKind::KlVsN => Some((n as f64, kl)),
            PlotKind::RatioVsN => klvar.get(&(p, n, seed)).map(|k| (n as f64, k / kl)),
            PlotKind::RatioVsKl => klvar.get(&(p, n, seed)).map(|k| (kl, k / kl)),
        };
        if let Some((x, y)) = point.filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite()) {
            by_p.entry(p).or_default().push((x, y));
        }
    }
    by_p.into_iter()
        .map(|(p, points)| {
            let mut groups: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
            for &(x, y) in &points {
                let g = groups.entry(x.to_bits()).or_insert((x, 0.0, 0));
                g.1 += y;
                g.2 += 1;
            }
            let mut means: Vec<(f64, f64)> = groups.values().map(|(x, s, c)| (*x, s / *c as f64)).collect();
            means.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { p, points, means }
        })
        .collect()
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 120.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;
const COLORS: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

struct Axes {
    lx: (f64, f64),
    ly: (f64, f64),
}

impl Axes {
    fn new(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            x0 = x0.min(x.log10());
            x1 = x1.max(x.log10());
            y0 = y0.min(y.log10());
            y1 = y1.max(y.log10());
        }
        let pad = |a: f64, b: f64| if b - a < 1e-9 { (a - 0.5, b + 0.5) } else { (a - 0.05 * (b - a), b + 0.05 * (b - a)) };
        Self { lx: pad(x0, x1), ly: pad(y0, y1) }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN_L + (x.log10() - self.lx.0) / (self.lx.1 - self.lx.0) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y.log10() - self.ly.0) / (self.ly.1 - self.ly.0) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `rows` as an SVG document. Errors when nothing can be plotted.
pub fn plot_rows(rows: &[ResultRow], kind: PlotKind) -> Result<String> {
    let data = series(rows, kind);
    if data.iter().all(|s| s.points.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "no plottable rows for {}: need finite kl_direct or kl_via_chain values{}",
            kind.as_str(),
            if kind == PlotKind::KlVsN { "" } else { " and matching klvar rows" }
        )));
    }
    let axes = Axes::new(data.iter().flat_map(|s| s.points.iter().copied()));
    let (xlabel, ylabel, title) = match kind {
        PlotKind::KlVsN => ("n", "KL(g, f)", "KL divergence against sample size"),
        PlotKind::RatioVsN => ("n", "½ KLvar / KL", "KL-variance ratio against sample size"),
        PlotKind::RatioVsKl => ("KL(g, f)", "½ KLvar / KL", "KL-variance ratio against KL"),
    };

    let mut s = String::new();
    let w = &mut s;
    // Writing to a String cannot fail.
    let _ = writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(w, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));

    let (x_lo, x_hi) = (MARGIN_L, WIDTH - MARGIN_R);
    let (y_lo, y_hi) = (HEIGHT - MARGIN_B, MARGIN_T);
    let _ = writeln!(w, r#"<rect x="{x_lo}" y="{y_hi}" width="{}" height="{}" fill="none" stroke="black"/>"#, x_hi - x_lo, y_lo - y_hi);
    for d in (axes.lx.0.ceil() as i32)..=(axes.lx.1.floor() as i32) {
        let x = axes.sx(10f64.powi(d));
        let _ = writeln!(w, r#"<line x1="{x:.2}" y1="{y_lo}" x2="{x:.2}" y2="{}" stroke="black"/>"#, y_lo + 5.0);
        let _ = writeln!(w, r#"<text x="{x:.2}" y="{}" text-anchor="middle">1e{d}</text>"#, y_lo + 18.0);
    }
    for d in (axes.ly.0.ceil() as i32)..=(axes.ly.1.floor() as i32) {
        let y = axes.sy(10f64.powi(d));
        let _ = writeln!(w, r#"<line x1="{}" y1="{y:.2}" x2="{x_lo}" y2="{y:.2}" stroke="black"/>"#, x_lo - 5.0);
        let _ = writeln!(w, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#, x_lo - 8.0, y + 4.0);
    }
    let _ = writeln!(w, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x_lo + x_hi) / 2.0, HEIGHT - 15.0, escape(xlabel));
    let _ = writeln!(
        w,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
        (y_lo + y_hi) / 2.0,
        escape(ylabel)
    );

    if kind != PlotKind::KlVsN {
        let y = axes.sy(1.0);
        if (y_hi..=y_lo).contains(&y) {
            let _ = writeln!(w, r##"<line x1="{x_lo}" y1="{y:.2}" x2="{x_hi}" y2="{y:.2}" stroke="#999" stroke-dasharray="2 3"/>"##);
        }
    }

    for (i, ser) in data.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for &(x, y) in &ser.points {
            let _ = writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.6"/>"#, axes.sx(x), axes.sy(y));
        }
        if ser.means.len() > 1 {
            let pts: Vec<String> = ser.means.iter().map(|&(x, y)| format!("{:.2},{:.2}", axes.sx(x), axes.sy(y))).collect();
            let _ = writeln!(w, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        }
        let ly = MARGIN_T + 16.0 * i as f64 + 10.0;
        let _ = writeln!(w, r#"<circle cx="{}" cy="{ly}" r="4" fill="{color}"/>"#, x_hi + 15.0);
        let _ = writeln!(w, r#"<text x="{}" y="{}">p = {}</text>"#, x_hi + 25.0, ly + 4.0, ser.p);
    }

    if kind == PlotKind::KlVsN {
        // Slope −1 through the last mean point of the first series.
        if let Some(&(xa, ya)) = data.iter().find_map(|s| s.means.last()) {
            let x0 = 10f64.powf(axes.lx.0);
            let y0 = ya * xa / x0;
            let (x_start, y_start) = if y0 > 10f64.powf(axes.ly.1) { (ya * xa / 10f64.powf(axes.ly.1), 10f64.powf(axes.ly.1)) } else { (x0, y0) };
            let _ = writeln!(
                w,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#444" stroke-dasharray="6 4"/>"##,
                axes.sx(x_start),
                axes.sy(y_start),
                axes.sx(xa),
                axes.sy(ya)
            );
            let ly = MARGIN_T + 16.0 * data.len() as f64 + 10.0;
            let _ = writeln!(w, r##"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="#444" stroke-dasharray="6 4"/>"##, x_hi + 8.0, x_hi + 22.0);
            let _ = writeln!(w, r#"<text x="{}" y="{}">slope −1</text>"#, x_hi + 25.0, ly + 4.0);
        }
    }
    let _ = writeln!(w, "</svg>");
    Ok(s)
}

/// Reads a result file and renders it.
pub fn plot<P: AsRef<Path>>(input: P, kind: PlotKind) -> Result<String> {
    plot_rows(&read_results_path(input)?, kind)
}
