//! SVG renderings of metric reports. Plots are drawn only from report rows,
//! so they can always be regenerated from the CSV.

use std::fmt::Write as _;

use contrast_core::metrics::report::{MetricsReport, ReportRow};
use contrast_core::segment::SweepResult;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Wci,
    Pci,
    Ssim,
    Iou,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Wci, Metric::Pci, Metric::Ssim, Metric::Iou];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Wci => "wci",
            Metric::Pci => "pci",
            Metric::Ssim => "ssim",
            Metric::Iou => "iou",
        }
    }

    fn get(self, r: &ReportRow) -> (Option<f64>, Option<f64>) {
        match self {
            Metric::Wci => (r.wci_mean, r.wci_ci95),
            Metric::Pci => (r.pci_mean, r.pci_ci95),
            Metric::Ssim => (r.ssim_mean, r.ssim_ci95),
            Metric::Iou => (r.iou_mean, r.iou_ci95),
        }
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = if self.x.1 > self.x.0 { (x - self.x.0) / (self.x.1 - self.x.0) } else { 0.5 };
        let sy = if self.y.1 > self.y.0 { (y - self.y.0) / (self.y.1 - self.y.0) } else { 0.5 };
        (MARGIN + sx * (W - 2.0 * MARGIN), H - MARGIN - sy * (H - 2.0 * MARGIN))
    }
}

fn frame(svg: &mut String, title: &str, axes: &Axes, xlabel: &str) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>
<line x1="{MARGIN}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>
"#,
        W / 2.0,
        H - MARGIN,
        W - MARGIN,
        H - MARGIN,
        H - MARGIN,
        W / 2.0,
        H - 12.0
    );
    for (v, anchor_y) in [(axes.y.0, H - MARGIN), (axes.y.1, MARGIN)] {
        let _ = writeln!(svg, r#"<text x="{}" y="{anchor_y}" text-anchor="end">{v:.3}</text>"#, MARGIN - 4.0);
    }
    for (v, anchor_x) in [(axes.x.0, MARGIN), (axes.x.1, W - MARGIN)] {
        let _ = writeln!(svg, r#"<text x="{anchor_x}" y="{}" text-anchor="middle">{v}</text>"#, H - MARGIN + 16.0);
    }
}

/// Mean per depth for every variant, with a shaded 95% CI band where
/// available. Each point carries its exact value in `data-value`.
pub fn render_metric(report: &MetricsReport, metric: Metric) -> Option<String> {
    let points: Vec<(&ReportRow, f64, Option<f64>)> = report
        .rows
        .iter()
        .filter_map(|r| {
            let (m, ci) = metric.get(r);
            m.map(|m| (r, m, ci))
        })
        .collect();
    if points.is_empty() {
        return None;
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, vals: &mut dyn Iterator<Item = f64>| vals.fold(init, f);
    let x = (
        fold(f64::min, f64::INFINITY, &mut points.iter().map(|p| p.0.depth_index as f64)),
        fold(f64::max, f64::NEG_INFINITY, &mut points.iter().map(|p| p.0.depth_index as f64)),
    );
    let y = (
        fold(f64::min, f64::INFINITY, &mut points.iter().map(|p| p.1 - p.2.unwrap_or(0.0))),
        fold(f64::max, f64::NEG_INFINITY, &mut points.iter().map(|p| p.1 + p.2.unwrap_or(0.0))),
    );
    let axes = Axes { x, y };
    let mut svg = String::new();
    frame(&mut svg, &format!("{} by depth", metric.name().to_uppercase()), &axes, "depth index");

    for (vi, variant) in report.variants().iter().enumerate() {
        let color = PALETTE[vi % PALETTE.len()];
        let series: Vec<&(&ReportRow, f64, Option<f64>)> = points.iter().filter(|p| p.0.variant == *variant).collect();
        if series.is_empty() {
            continue;
        }
        if series.iter().all(|p| p.2.is_some()) && series.len() > 1 {
            let upper = series.iter().map(|p| axes.px(p.0.depth_index as f64, p.1 + p.2.unwrap()));
            let lower = series.iter().rev().map(|p| axes.px(p.0.depth_index as f64, p.1 - p.2.unwrap()));
            let pts: Vec<String> = upper.chain(lower).map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
            let _ = writeln!(svg, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "));
        }
        let line: Vec<String> = series
            .iter()
            .map(|p| {
                let (a, b) = axes.px(p.0.depth_index as f64, p.1);
                format!("{a:.2},{b:.2}")
            })
            .collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        for p in &series {
            let (a, b) = axes.px(p.0.depth_index as f64, p.1);
            let _ = writeln!(
                svg,
                r#"<circle cx="{a:.2}" cy="{b:.2}" r="2.5" fill="{color}" data-variant="{variant}" data-depth="{}" data-value="{}"/>"#,
                p.0.depth_index, p.1
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{variant}</text>"#,
            W - MARGIN + 4.0,
            MARGIN + 14.0 * vi as f64
        );
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

/// IoU distribution per k: min–max whisker, interquartile box and mean.
pub fn render_sweep(sweep: &SweepResult) -> String {
    let axes = Axes {
        x: (-0.5, sweep.per_k.len() as f64 - 0.5),
        y: (0.0, 1.0),
    };
    let mut svg = String::new();
    frame(&mut svg, &format!("best-threshold IoU by iteration (k* = {})", sweep.selected_k), &axes, "k");
    for s in &sweep.per_k {
        let mut v = s.iou_distribution.clone();
        v.sort_unstable_by(f64::total_cmp);
        let q = |p: f64| contrast_core::image::percentile_of_sorted(&v, p);
        let x = s.k as f64;
        let (cx, top) = axes.px(x, q(100.0));
        let (_, bottom) = axes.px(x, q(0.0));
        let (_, q3) = axes.px(x, q(75.0));
        let (_, q1) = axes.px(x, q(25.0));
        let (_, m) = axes.px(x, s.mean_iou);
        let _ = writeln!(svg, r#"<line x1="{cx:.2}" y1="{top:.2}" x2="{cx:.2}" y2="{bottom:.2}" stroke="black"/>"#);
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{q3:.2}" width="20" height="{:.2}" fill="{}" fill-opacity="0.5" stroke="black"/>"#,
            cx - 10.0,
            (q1 - q3).max(0.5),
            PALETTE[0]
        );
        let _ = writeln!(
            svg,
            r#"<circle cx="{cx:.2}" cy="{m:.2}" r="3" fill="black" data-k="{}" data-value="{}"/>"#,
            s.k, s.mean_iou
        );
    }
    svg.push_str("</svg>\n");
    svg
}
