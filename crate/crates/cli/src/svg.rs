//! Minimal static SVG figures. Output depends only on the inputs, so two
//! runs produce identical files.

use std::fmt::Write;

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";
const PALETTE: [&str; 12] = [
    "#08306b", "#08519c", "#2171b5", "#4292c6", "#6baed6", "#9ecae1", "#c6dbef", "#fdd0a2", "#fdae6b", "#fd8d3c",
    "#e6550d", "#bdbdbd",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(w: f64, h: f64, title: &str, provenance: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">"
    );
    let _ = writeln!(s, "<!-- {} -->", esc(provenance));
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        w / 2.0,
        esc(title)
    );
    s
}

fn text(s: &mut String, x: f64, y: f64, anchor: &str, body: &str) {
    let _ = writeln!(
        s,
        "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" {FONT}>{}</text>",
        esc(body)
    );
}

fn line(s: &mut String, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
    let _ = writeln!(
        s,
        "<line x1=\"{x1:.1}\" y1=\"{y1:.1}\" x2=\"{x2:.1}\" y2=\"{y2:.1}\" stroke=\"{stroke}\"/>"
    );
}

fn rect(s: &mut String, x: f64, y: f64, w: f64, h: f64, fill: &str) {
    let _ = writeln!(
        s,
        "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{fill}\"/>",
        w.max(0.0),
        h.max(0.0)
    );
}

/// Horizontal bar chart, one bar per label, with optional error whiskers.
pub fn bar_chart(title: &str, x_label: &str, labels: &[String], values: &[f64], errors: Option<&[f64]>, provenance: &str) -> String {
    let (left, right, top, row) = (300.0, 30.0, 34.0, 18.0);
    let plot_w = 360.0;
    let h = top + row * labels.len() as f64 + 40.0;
    let w = left + plot_w + right;
    let hi = values
        .iter()
        .zip(0..)
        .map(|(v, i)| v + errors.map_or(0.0, |e| e[i]))
        .fold(0.0f64, f64::max);
    let lo = values.iter().copied().fold(0.0f64, f64::min);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x_of = |v: f64| left + (v - lo) / span * plot_w;
    let mut s = open(w, h, title, provenance);
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let y = top + row * i as f64;
        text(&mut s, left - 6.0, y + 12.0, "end", label);
        let (a, b) = (x_of(0.0), x_of(v));
        rect(&mut s, a.min(b), y + 3.0, (b - a).abs(), row - 6.0, "#4292c6");
        if let Some(e) = errors {
            line(&mut s, x_of(v - e[i]), y + row / 2.0, x_of(v + e[i]), y + row / 2.0, "#222");
        }
    }
    let base = top + row * labels.len() as f64;
    line(&mut s, left, base, left + plot_w, base, "#222");
    line(&mut s, x_of(0.0), top, x_of(0.0), base, "#222");
    text(&mut s, left, base + 14.0, "middle", &format!("{lo:.3}"));
    text(&mut s, left + plot_w, base + 14.0, "middle", &format!("{hi:.3}"));
    text(&mut s, left + plot_w / 2.0, base + 30.0, "middle", x_label);
    s.push_str("</svg>\n");
    s
}

/// Horizontal stacked bars: `stacks[i][k]` is segment `k` of bar `i`.
pub fn stacked_bars(title: &str, x_label: &str, labels: &[String], stacks: &[Vec<f64>], segment_names: &[String], provenance: &str) -> String {
    let (left, top, row) = (300.0, 34.0, 18.0);
    let plot_w = 360.0;
    let legend_h = 16.0 * ((segment_names.len() + 5) / 6) as f64;
    let h = top + row * labels.len() as f64 + 40.0 + legend_h;
    let w = left + plot_w + 30.0;
    let total = stacks.iter().map(|r| r.iter().sum::<f64>()).fold(0.0f64, f64::max).max(1e-12);
    let mut s = open(w, h, title, provenance);
    for (i, (label, segs)) in labels.iter().zip(stacks).enumerate() {
        let y = top + row * i as f64;
        text(&mut s, left - 6.0, y + 12.0, "end", label);
        let mut x = left;
        for (k, &v) in segs.iter().enumerate() {
            let wd = v / total * plot_w;
            rect(&mut s, x, y + 3.0, wd, row - 6.0, PALETTE[k % PALETTE.len()]);
            x += wd;
        }
    }
    let base = top + row * labels.len() as f64;
    line(&mut s, left, base, left + plot_w, base, "#222");
    text(&mut s, left, base + 14.0, "middle", "0");
    text(&mut s, left + plot_w, base + 14.0, "middle", &format!("{total:.0}"));
    text(&mut s, left + plot_w / 2.0, base + 30.0, "middle", x_label);
    for (k, name) in segment_names.iter().enumerate() {
        let x = 20.0 + 110.0 * (k % 6) as f64;
        let y = base + 40.0 + 16.0 * (k / 6) as f64;
        rect(&mut s, x, y - 9.0, 10.0, 10.0, PALETTE[k % PALETTE.len()]);
        text(&mut s, x + 14.0, y, "start", name);
    }
    s.push_str("</svg>\n");
    s
}

/// ROC polyline on the unit square, with the chance diagonal.
pub fn roc_curve(title: &str, fpr: &[f64], tpr: &[f64], caption: &str, provenance: &str) -> String {
    let (m, side) = (50.0, 320.0);
    let (w, h) = (side + 2.0 * m, side + 2.0 * m + 10.0);
    let px = |x: f64| m + x * side;
    let py = |y: f64| m + (1.0 - y) * side;
    let mut s = open(w, h, title, provenance);
    rect(&mut s, m, m, side, side, "#f7f7f7");
    line(&mut s, px(0.0), py(0.0), px(1.0), py(1.0), "#bbb");
    let pts: Vec<String> = fpr.iter().zip(tpr).map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
    let _ = writeln!(
        s,
        "<polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\" points=\"{}\"/>",
        pts.join(" ")
    );
    text(&mut s, m + side / 2.0, m + side + 30.0, "middle", "false positive rate");
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\" {FONT}>true positive rate</text>",
        m + side / 2.0,
        m + side / 2.0
    );
    for t in [0.0, 0.5, 1.0] {
        text(&mut s, px(t), m + side + 14.0, "middle", &format!("{t:.1}"));
        text(&mut s, m - 6.0, py(t) + 4.0, "end", &format!("{t:.1}"));
    }
    text(&mut s, px(0.6), py(0.1), "middle", caption);
    s.push_str("</svg>\n");
    s
}

fn heat_color(v: f64) -> String {
    // white (0) to dark red (1)
    let t = v.clamp(0.0, 1.0);
    let r = 255.0 - 90.0 * t;
    let g = 255.0 - 240.0 * t;
    let b = 255.0 - 230.0 * t;
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

/// Grid heatmap of `z[iy][ix]` in `[0, 1]`.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, x_axis: &[f64], y_axis: &[f64], z: &[Vec<f64>], provenance: &str) -> String {
    let (m, side) = (70.0, 300.0);
    let (w, h) = (side + 2.0 * m + 40.0, side + 2.0 * m);
    let cw = side / x_axis.len().max(1) as f64;
    let ch = side / y_axis.len().max(1) as f64;
    let mut s = open(w, h, title, provenance);
    for (iy, row) in z.iter().enumerate() {
        for (ix, &v) in row.iter().enumerate() {
            // y grows upward
            let y = m + side - ch * (iy + 1) as f64;
            rect(&mut s, m + cw * ix as f64, y, cw + 0.3, ch + 0.3, &heat_color(v));
        }
    }
    let fmt = |v: f64| table_num(v);
    if let (Some(a), Some(b)) = (x_axis.first(), x_axis.last()) {
        text(&mut s, m, m + side + 14.0, "start", &fmt(*a));
        text(&mut s, m + side, m + side + 14.0, "end", &fmt(*b));
    }
    if let (Some(a), Some(b)) = (y_axis.first(), y_axis.last()) {
        text(&mut s, m - 4.0, m + side, "end", &fmt(*a));
        text(&mut s, m - 4.0, m + 10.0, "end", &fmt(*b));
    }
    text(&mut s, m + side / 2.0, m + side + 32.0, "middle", x_label);
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\" {FONT}>{}</text>",
        m + side / 2.0,
        m + side / 2.0,
        esc(y_label)
    );
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        rect(&mut s, m + side + 14.0, m + side - side * (t + 0.1), 14.0, side * 0.1, &heat_color(t));
    }
    text(&mut s, m + side + 32.0, m + side, "start", "0");
    text(&mut s, m + side + 32.0, m + 10.0, "start", "1");
    s.push_str("</svg>\n");
    s
}

fn table_num(v: f64) -> String {
    histoforest_core::table::fmt_sig(v, 4)
}
