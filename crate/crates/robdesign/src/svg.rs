//! Static bar chart of design weights.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

/// Bars of `weights` in point order; `labels` gives the first and last
/// point for the horizontal axis.
pub fn weight_profile(title: &str, weights: &[f64], labels: (&str, &str)) -> String {
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let top = weights.iter().cloned().fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let slot = plot_w / weights.len().max(1) as f64;
    let bar = (slot * 0.8).max(0.5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let base = HEIGHT - MARGIN;
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{base}" stroke="black"/>"#
    );
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let h = plot_h * w / top;
        let x = MARGIN + slot * i as f64 + (slot - bar) / 2.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.3}" y="{:.3}" width="{bar:.3}" height="{h:.3}" fill="steelblue"><title>{i}: {w}</title></rect>"#,
            base - h
        );
    }
    let label_y = base + 18.0;
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{label_y}" font-family="sans-serif" font-size="11">{}</text>"#,
        escape(labels.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{label_y}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
        WIDTH - MARGIN,
        escape(labels.1)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{top:.4}</text>"#,
        MARGIN - 4.0,
        MARGIN + 4.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
