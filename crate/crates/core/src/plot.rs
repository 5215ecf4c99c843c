//! Minimal SVG charts for benchmark sweeps and deformable sampling points.

use std::fmt::Write;

use crate::geometry::Point;
use crate::kernels::deform_sampling_points;
use crate::synthbench::SweepReport;
use crate::tensor::Tensor;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ =
        writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        MARGIN + (x - self.x0) / span * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        H - MARGIN - (y - self.y0) / span * (H - 2.0 * MARGIN)
    }

    fn draw(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
        let _ = writeln!(out, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#);
        for k in 0..=4 {
            let fx = self.x0 + (self.x1 - self.x0) * k as f64 / 4.0;
            let fy = self.y0 + (self.y1 - self.y0) * k as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.3}</text>"#,
                self.px(fx),
                b + 16.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{fy:.2}</text>"#,
                l - 6.0,
                self.py(fy) + 4.0
            );
        }
        let _ =
            writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
        let _ = writeln!(
            out,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
    }
}

/// AP against the swept parameter, one polyline per strategy.
pub fn sweep_svg(row: &SweepReport) -> String {
    let xs: Vec<f64> = row.cells.iter().enumerate().map(|(k, c)| c.value.unwrap_or(k as f64)).collect();
    let (x0, x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let axes =
        Axes { x0: if x0.is_finite() { x0 } else { 0.0 }, x1: if x1.is_finite() { x1 } else { 1.0 }, y0: 0.0, y1: 1.0 };
    let mut out = String::new();
    header(&mut out, &format!("AP vs {}", row.param.map_or("setting", |p| p.name())));
    axes.draw(&mut out, row.param.map_or("cell", |p| p.name()), "AP");
    let strategies: Vec<_> =
        row.cells.first().map(|c| c.results.iter().map(|r| r.strategy).collect()).unwrap_or_default();
    for (k, s) in strategies.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64)> = row
            .cells
            .iter()
            .zip(&xs)
            .filter_map(|(c, &x)| c.result(*s).and_then(|r| r.eval.ap).map(|ap| (axes.px(x), axes.py(ap))))
            .collect();
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let _ =
            writeln!(out, r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#, path.join(" "));
        for (x, y) in &pts {
            let _ = writeln!(out, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{color}"/>"#);
        }
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="12" height="3" fill="{color}"/>"#,
            W - MARGIN - 150.0,
            ly - 4.0
        );
        let _ = writeln!(out, r#"<text x="{}" y="{ly}">{}</text>"#, W - MARGIN - 132.0, s.name());
    }
    out.push_str("</svg>\n");
    out
}

/// Sampling locations of a deformable kernel at the given cells, drawn in
/// feature-map coordinates with the regular grid for reference.
pub fn dcn_scatter_svg(offsets: &Tensor, kernel: usize, cells: &[(usize, usize)]) -> String {
    let (rows, cols) = (offsets.height() as f64, offsets.width() as f64);
    let axes = Axes { x0: -0.5, x1: cols - 0.5, y0: -0.5, y1: rows - 0.5 };
    // image rows grow downward
    let py = |y: f64| axes.py(rows - 1.0 - y);
    let mut out = String::new();
    header(&mut out, "deformable sampling points");
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ =
        writeln!(out, r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#888"/>"##, r - l, b - t);
    let half = (kernel / 2) as f64;
    for (k, &(i, j)) in cells.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<circle cx="{:.1}" cy="{:.1}" r="5" fill="none" stroke="{color}" stroke-width="2"/>"#,
            axes.px(j as f64),
            py(i as f64)
        );
        for a in 0..kernel {
            for c in 0..kernel {
                let g = Point::new(j as f64 + c as f64 - half, i as f64 + a as f64 - half);
                let _ =
                    writeln!(out, r##"<circle cx="{:.1}" cy="{:.1}" r="1.5" fill="#bbb"/>"##, axes.px(g.x), py(g.y));
            }
        }
        for p in deform_sampling_points(offsets, kernel, i, j) {
            let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#, axes.px(p.x), py(p.y));
        }
    }
    out.push_str("</svg>\n");
    out
}
