//! Minimal SVG bar chart for ablation summaries.

use std::fmt::Write as _;

use super::ablate::VariantSummary;

pub fn bar_chart_svg(summaries: &[VariantSummary]) -> String {
    let (w, h) = (120 * summaries.len().max(1) + 80, 320);
    let (left, top, plot_h) = (60.0, 20.0, 240.0);
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            w as f64 - 20.0,
            y(v),
            y(v),
            left - 6.0,
            y(v) + 4.0
        );
    }
    for (i, sm) in summaries.iter().enumerate() {
        let x0 = left + 20.0 + 120.0 * i as f64;
        for (j, (mean, std, color)) in [
            (sm.miou_mean, sm.miou_std, "#4c72b0"),
            (sm.mdice_mean, sm.mdice_std, "#dd8452"),
        ]
        .into_iter()
        .enumerate()
        {
            let x = x0 + 40.0 * j as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="36" height="{:.1}" fill="{color}"/>"#,
                y(mean),
                y(0.0) - y(mean)
            );
            let cx = x + 18.0;
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#,
                y(mean + std),
                y(mean - std)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + 38.0,
            top + plot_h + 16.0,
            sm.variant.name()
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{left}" y="{}" fill="#4c72b0">mIoU</text><text x="{}" y="{}" fill="#dd8452">mDice</text>"##,
        h - 10,
        left + 50.0,
        h - 10
    );
    s.push_str("</svg>\n");
    s
}
