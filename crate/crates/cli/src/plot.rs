//! Static SVG figures drawn from a report CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dilute_homog::experiment::{lambda2_log, least_squares, read_csv_table};

use crate::Failure;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Data series get markers; model lines are dashed.
    pub markers: bool,
}

pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = if log { (-1.0, 0.0) } else { (0.0, 1.0) };
        }
        if hi - lo < 1e-12 {
            let pad = if log { 0.5 } else { 0.5 * lo.abs().max(1e-12) };
            lo -= pad;
            hi += pad;
        }
        let pad = 0.05 * (hi - lo);
        Self {
            lo: lo - pad,
            hi: hi + pad,
            log,
        }
    }

    /// Position in `[0, 1]`, or `None` for values a log axis cannot show.
    fn unit(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some((v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let mut t: Vec<(f64, String)> = (a..=b).map(|e| (10f64.powi(e), format!("1e{e}"))).collect();
            if t.len() < 2 {
                for e in (self.lo.floor() as i32)..=(self.hi.ceil() as i32) {
                    for m in [2.0, 5.0] {
                        let v = m * 10f64.powi(e);
                        let l = v.log10();
                        if l >= self.lo && l <= self.hi {
                            t.push((v, format!("{m}e{e}")));
                        }
                    }
                }
                t.sort_by(|x, y| x.0.total_cmp(&y.0));
            }
            return t;
        }
        let raw = (self.hi - self.lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let mut t = Vec::new();
        let mut k = (self.lo / step).ceil();
        while k * step <= self.hi {
            let v = k * step;
            t.push((v, format_linear(v, step)));
            k += 1.0;
        }
        t
    }
}

fn format_linear(v: f64, step: f64) -> String {
    let digits = (-step.log10().floor()).max(0.0) as usize;
    if v.abs() >= 1e5 || (v != 0.0 && v.abs() < 1e-4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.digits$}")
    }
}

impl Figure {
    pub fn to_svg(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let xa = Axis::new(all().map(|p| p.0), self.log_x);
        let ya = Axis::new(all().map(|p| p.1), self.log_y);
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |v: f64| xa.unit(v).map(|u| LEFT + u * pw);
        let py = |v: f64| ya.unit(v).map(|u| TOP + (1.0 - u) * ph);

        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(s, r#"<g class="axes" stroke="black" fill="none">"#);
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/>"#);
        let _ = writeln!(s, "</g>");

        let _ = writeln!(s, r#"<g class="ticks">"#);
        for (v, label) in xa.ticks() {
            if let Some(x) = px(v) {
                let y0 = TOP + ph;
                let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 5.0);
                let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{y0:.2}" stroke="lightgrey"/>"#);
                let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, y0 + 18.0, escape(&label));
            }
        }
        for (v, label) in ya.ticks() {
            if let Some(y) = py(v) {
                let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
                let _ = writeln!(s, r#"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="lightgrey"/>"#, LEFT + pw);
                let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, y + 4.0, escape(&label));
            }
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (k, series) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let mut pts: Vec<(f64, f64)> = series
                .points
                .iter()
                .filter_map(|&(x, y)| Some((px(x)?, py(y)?)))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let dash = if series.markers { "" } else { r#" stroke-dasharray="6 4""# };
            let _ = writeln!(s, r#"<g class="series" data-name="{}">"#, escape(&series.name));
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                coords.join(" ")
            );
            if series.markers {
                for (x, y) in &pts {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
                }
            }
            let _ = writeln!(s, "</g>");
        }

        let _ = writeln!(s, r#"<g class="legend">"#);
        for (k, series) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let x = LEFT + pw + 15.0;
            let y = TOP + 10.0 + 20.0 * k as f64;
            let dash = if series.markers { "" } else { r#" stroke-dasharray="6 4""# };
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                x + 25.0
            );
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 32.0, y + 4.0, escape(&series.name));
        }
        let _ = writeln!(s, "</g>");
        s.push_str("</svg>\n");
        s
    }
}

/// Parsed report rows, keyed by column name.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str) -> Result<usize, Failure> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::config(format!("report CSV has no column `{name}`")))
    }

    fn num(&self, row: usize, col: usize) -> Result<f64, Failure> {
        let cell = self.rows[row][col].trim();
        if cell.is_empty() {
            return Ok(f64::NAN);
        }
        cell.parse().map_err(|_| {
            Failure::config(format!("report CSV line {}: `{}` is not a number in column `{}`", row + 2, cell, self.header[col]))
        })
    }
}

fn level_name(l: &str, n: &str) -> String {
    if l == "inf" {
        "L, N -> inf".to_string()
    } else {
        format!("L = {l}, N = {n}")
    }
}

/// Builds both figures from report CSV text.
pub fn figures(csv: &str) -> Result<(Figure, Figure), Failure> {
    let (header, rows) = read_csv_table(csv)?;
    let t = Table { header, rows };
    let (c_kind, c_l, c_n) = (t.col("kind")?, t.col("L")?, t.col("N")?);
    let (c_l2a, c_l2h) = (t.col("lambda2_analytic")?, t.col("lambda2_hat")?);
    let (c_phi, c_eps, c_noise) = (t.col("phi_mean")?, t.col("eps")?, t.col("above_noise")?);
    let (c_abar, c_cm, c_a2) = (t.col("abar_11")?, t.col("cm_11")?, t.col("hat_a2_11")?);

    // Insertion order: levels as they appear, the limit last.
    let mut order: Vec<String> = Vec::new();
    let mut eps: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut abar: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let (mut fit_x, mut fit_y) = (Vec::new(), Vec::new());
    let mut a1_11 = None;
    let mut a2_11 = f64::NAN;
    let mut phi_max: f64 = 0.0;
    for r in 0..t.rows.len() {
        let name = level_name(&t.rows[r][c_l], &t.rows[r][c_n]);
        if !order.contains(&name) {
            order.push(name.clone());
        }
        let l2 = match t.num(r, c_l2a)? {
            v if v.is_finite() => v,
            _ => t.num(r, c_l2h)?,
        };
        let e = t.num(r, c_eps)?;
        let phi = t.num(r, c_phi)?;
        let x = if l2 > 0.0 && l2 < 1.0 { lambda2_log(l2) } else { f64::NAN };
        eps.entry(name.clone()).or_default().push((x, e));
        abar.entry(name.clone()).or_default().push((phi, t.num(r, c_abar)?));
        phi_max = phi_max.max(phi);
        if t.rows[r][c_kind] == "extrapolated" {
            if t.rows[r][c_noise] == "true" && e > 0.0 && x.is_finite() {
                fit_x.push(x.ln());
                fit_y.push(e.ln());
            }
            if a1_11.is_none() {
                a2_11 = t.num(r, c_a2)?;
                a1_11 = Some(t.num(r, c_cm)? - phi * a2_11);
            }
        }
    }
    if let Some(limit) = order.iter().position(|n| n.ends_with("inf")) {
        let n = order.remove(limit);
        order.push(n);
    }

    let mut eps_series: Vec<Series> = order
        .iter()
        .map(|n| Series {
            name: n.clone(),
            points: eps.remove(n).unwrap_or_default(),
            markers: true,
        })
        .collect();
    if fit_x.len() >= 3 {
        let (a, b, _) = least_squares(&fit_x, &fit_y);
        let lo = fit_x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = fit_x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        eps_series.push(Series {
            name: format!("fit, slope {b:.3}"),
            points: [lo, hi].iter().map(|&x| (x.exp(), (a + b * x).exp())).collect(),
            markers: false,
        });
    }
    let eps_fig = Figure {
        title: "Deviation from the first-order prediction".into(),
        x_label: "lambda2 |log lambda2|".into(),
        y_label: "eps".into(),
        log_x: true,
        log_y: true,
        series: eps_series,
    };

    let mut abar_series: Vec<Series> = order
        .iter()
        .map(|n| Series {
            name: n.clone(),
            points: abar.remove(n).unwrap_or_default(),
            markers: true,
        })
        .collect();
    if let Some(a1) = a1_11.filter(|v| v.is_finite()) {
        let hi = if phi_max > 0.0 { 1.1 * phi_max } else { 1.0 };
        abar_series.push(Series {
            name: "A1 + phi hatA2".into(),
            points: vec![(0.0, a1), (hi, a1 + hi * a2_11)],
            markers: false,
        });
    }
    let abar_fig = Figure {
        title: "Effective conductivity against volume fraction".into(),
        x_label: "phi".into(),
        y_label: "Abar_11".into(),
        log_x: false,
        log_y: false,
        series: abar_series,
    };
    Ok((eps_fig, abar_fig))
}

/// Writes `eps_scaling.svg` and `abar_vs_phi.svg` into `dir`.
pub fn write_figures(csv: &str, dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let (eps, abar) = figures(csv)?;
    let mut out = Vec::new();
    for (name, fig) in [("eps_scaling.svg", eps), ("abar_vs_phi.svg", abar)] {
        let p = dir.join(name);
        std::fs::write(&p, fig.to_svg()).map_err(|e| Failure::io(format!("cannot write {}: {e}", p.display())))?;
        out.push(p);
    }
    Ok(out)
}
