//! Static SVG line charts with min–max bands.

use std::fmt::Write as _;

use super::report::{StudyKind, StudyReport};
use super::study::Method;

/// One curve: `(x, mean, min, max)` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#c0392b", "#2e6fba", "#2a9d4b", "#8e44ad", "#d4861f", "#555555"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let ty = |y: f64| if self.log_y { y.max(1e-300).log10() } else { y };
        let finite: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().flat_map(|&(x, _, lo, hi)| [(x, ty(lo)), (x, ty(hi))]))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        let (mut x0, mut x1, mut y0, mut y1) = finite.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        );
        if finite.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if self.log_y {
            y0 = y0.floor();
            y1 = y1.ceil().max(y0 + 1.0);
        } else if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for k in 0..=5 {
            let x = x0 + (x1 - x0) * k as f64 / 5.0;
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(x), TOP + ph + 16.0, fmt_tick(x));
        }
        let ticks: Vec<f64> = if self.log_y {
            (y0 as i32..=y1 as i32).map(|e| e as f64).collect()
        } else {
            (0..=5).map(|k| y0 + (y1 - y0) * k as f64 / 5.0).collect()
        };
        for t in ticks {
            let y = TOP + (1.0 - (t - y0) / (y1 - y0)) * ph;
            let label = if self.log_y { format!("1e{}", t as i32) } else { fmt_tick(t) };
            let _ = writeln!(s, r##"<line x1="{LEFT}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/>"##, LEFT + pw);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, LEFT - 6.0, y + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let pts: Vec<&(f64, f64, f64, f64)> = series.points.iter().filter(|p| ty(p.1).is_finite()).collect();
            if pts.is_empty() {
                continue;
            }
            let mut band: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", px(p.0), py(p.3))).collect();
            band.extend(pts.iter().rev().map(|p| format!("{:.1},{:.1}", px(p.0), py(p.2))));
            let _ = writeln!(s, r#"<polygon points="{}" fill="{}" fill-opacity="0.15" stroke="none"/>"#, band.join(" "), series.color);
            let line: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", px(p.0), py(p.1))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, line.join(" "), series.color);
            let ly = TOP + 16.0 + 18.0 * i as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(s, r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{}" stroke-width="2"/>"#, lx + 20.0, series.color);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&series.name));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e4) {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn name(m: Method, n_s: usize, several: bool) -> String {
    if several {
        format!("{} N_s={n_s}", m.as_str().to_uppercase())
    } else {
        m.as_str().to_uppercase()
    }
}

/// Charts for a report: errors (and speed-ups when timed) over the basis
/// size, or the maximum error over the speed for extrapolation studies.
pub fn charts(report: &StudyReport) -> Vec<(String, Chart)> {
    let counts = report.snapshot_counts();
    let several = counts.len() > 1;
    let mut colors = PALETTE.iter().cycle();
    let mut error = Vec::new();
    let mut speed = Vec::new();
    for m in report.methods() {
        for &n_s in &counts {
            let color = *colors.next().unwrap();
            let rows = report.curve(m, n_s);
            let pts = |f: fn(&super::report::SummaryRow) -> Option<super::metrics::Stats>| -> Vec<(f64, f64, f64, f64)> {
                rows.iter().filter_map(|r| f(r).map(|s| (r.n_rb as f64, s.mean, s.min, s.max))).collect()
            };
            error.push(Series { name: name(m, n_s, several), color, points: pts(|r| r.error) });
            let sp = pts(|r| r.speedup);
            if !sp.is_empty() {
                speed.push(Series { name: name(m, n_s, several), color, points: sp });
            }
        }
    }
    let mut out = Vec::new();
    if report.meta.study == StudyKind::Extrapolation {
        let largest = report.meta.config.sizes.iter().copied().max().unwrap_or(1);
        let series = report
            .methods()
            .into_iter()
            .zip(PALETTE)
            .map(|(m, color)| {
                let points = report
                    .records
                    .iter()
                    .filter(|r| r.method == m && r.n_rb == largest)
                    .filter_map(|r| r.max_abs_error.map(|e| (r.w_i, e, e, e)))
                    .collect();
                Series { name: m.as_str().to_uppercase(), color, points }
            })
            .collect();
        out.push((
            "max_abs_error".into(),
            Chart {
                title: format!("Maximum absolute error, N_rb = {largest}"),
                x_label: "w_i [m/s]".into(),
                y_label: "max |u - u_h| [m/s]".into(),
                log_y: true,
                series,
            },
        ));
        return out;
    }
    out.push((
        "error".into(),
        Chart {
            title: "Relative L2 error over the test set".into(),
            x_label: "N_rb".into(),
            y_label: "relative L2 error".into(),
            log_y: true,
            series: error,
        },
    ));
    if !speed.is_empty() {
        out.push((
            "speedup".into(),
            Chart { title: "Speed-up over the full-order solve".into(), x_label: "N_rb".into(), y_label: "speed-up".into(), log_y: true, series: speed },
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed() {
        let c = Chart {
            title: "t <1>".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_y: true,
            series: vec![Series { name: "a".into(), color: PALETTE[0], points: vec![(1.0, 1e-3, 1e-4, 1e-2), (2.0, 1e-5, 1e-6, 1e-4)] }],
        };
        let svg = c.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("t &lt;1&gt;"));
        assert!(svg.contains("<polyline"));
    }
}
