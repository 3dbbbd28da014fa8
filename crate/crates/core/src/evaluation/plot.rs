//! Minimal SVG line charts.

use std::fmt::Write as _;

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn chart(title: &str, series: &[(String, Vec<(f64, f64)>)], x: (f64, f64), y: (f64, f64), diagonal: bool) -> String {
    let sx = |v: f64| PAD + (v - x.0) / (x.1 - x.0).max(1e-12) * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - y.0) / (y.1 - y.0).max(1e-12) * (H - 2.0 * PAD);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W / 2.0,
        escape(title),
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(s, "<text x=\"{PAD}\" y=\"{}\">{:.3}</text>", H - PAD + 14.0, x.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>", W - PAD, H - PAD + 14.0, x.1);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>", PAD - 4.0, H - PAD, y.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>", PAD - 4.0, PAD + 8.0, y.1);
    if diagonal {
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#bbb\" stroke-dasharray=\"4\"/>",
            sx(x.0),
            sy(y.0),
            sx(x.1),
            sy(y.1)
        );
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|(a, b)| format!("{:.2},{:.2}", sx(*a), sy(*b))).collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>", path.join(" "));
        let ly = PAD + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{ly}\" fill=\"{color}\">{}</text>",
            PAD + 6.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// ROC curves on the unit square with the chance diagonal.
pub fn roc_svg(title: &str, curves: &[(String, Vec<(f64, f64)>)]) -> String {
    chart(title, curves, (0.0, 1.0), (0.0, 1.0), true)
}

/// Per-epoch value curves, one series per entry.
pub fn curves_svg(title: &str, series: &[(String, Vec<f64>)]) -> String {
    let pts: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|(n, v)| (n.clone(), v.iter().enumerate().map(|(i, y)| (i as f64, *y)).collect()))
        .collect();
    let ys = pts.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)).filter(|v| v.is_finite());
    let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let xmax = pts.iter().map(|(_, p)| p.len()).max().unwrap_or(1).saturating_sub(1).max(1) as f64;
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    chart(title, &pts, (0.0, xmax), (lo, hi), false)
}
