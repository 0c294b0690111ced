//! Minimal SVG rendering for disagreement heatmaps and scaling fits.

use std::fmt::Write as _;

use crate::evaluation::{DisagreementMatrix, ScalingFit};

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// White-to-blue ramp over `[0, max]`.
fn shade(v: f64, max: f64) -> String {
    let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

pub fn heatmap(m: &DisagreementMatrix) -> String {
    let n = m.axis.len();
    let cell = 48.0;
    let margin = 170.0;
    let size = margin + cell * n as f64 + 20.0;
    let max = m
        .values
        .iter()
        .flatten()
        .copied()
        .fold(0.0f64, f64::max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="11">"#
    );
    for (i, label) in m.axis.iter().enumerate() {
        let y = margin + cell * i as f64 + cell / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            margin - 6.0,
            escape(label)
        );
        let x = margin + cell * i as f64 + cell / 2.0;
        let _ = writeln!(
            s,
            r#"<text transform="translate({x},{}) rotate(-45)">{}</text>"#,
            margin - 6.0,
            escape(label)
        );
    }
    for (t, row) in m.values.iter().enumerate() {
        for (src, v) in row.iter().enumerate() {
            let x = margin + cell * src as f64;
            let y = margin + cell * t as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{}"><title>{:.4}</title></rect>"#,
                shade(*v, max),
                v
            );
            let ink = if max > 0.0 && *v / max > 0.55 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" dominant-baseline="middle" fill="{ink}">{v:.3}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Log-log scatter of the fitted points with the fitted line.
pub fn scaling_plot(fit: &ScalingFit) -> String {
    let (w, h, pad) = (480.0, 320.0, 50.0);
    let xs: Vec<f64> = fit.points.iter().map(|(f, _)| f.log10()).collect();
    let ys: Vec<f64> = fit.points.iter().map(|(_, v)| v.log10()).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">log10 training fraction</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(14,{}) rotate(-90)" text-anchor="middle">log10 WD</text>"#,
        h / 2.0
    );
    let line = |x: f64| fit.intercept + fit.slope * x;
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="2"/>"##,
        px(x0),
        py(line(x0)).clamp(0.0, h),
        px(x1),
        py(line(x1)).clamp(0.0, h)
    );
    for (x, y) in xs.iter().zip(&ys) {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#1f77b4"/>"##,
            px(*x),
            py(*y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}">slope {:.4}, intercept {:.4}</text>"#,
        pad + 8.0,
        pad - 10.0,
        fit.slope,
        fit.intercept
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::SourceKind;

    #[test]
    fn heatmap_has_one_rect_per_cell() {
        let m = DisagreementMatrix {
            axis: vec!["a".into(), "b<c".into()],
            values: vec![vec![0.0, 0.2], vec![0.2, 0.0]],
            source_kind: SourceKind::Human,
        };
        let svg = heatmap(&m);
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains("b&lt;c"));
    }

    #[test]
    fn flat_points_do_not_divide_by_zero() {
        let fit = ScalingFit {
            slope: 0.0,
            intercept: 0.0,
            points: vec![(1.0, 1.0), (0.5, 1.0)],
        };
        assert!(!scaling_plot(&fit).contains("NaN"));
    }
}
