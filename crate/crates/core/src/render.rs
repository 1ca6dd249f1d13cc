//! Box-plot statistics and a dependency-free SVG renderer.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::stats::median_sorted;

pub const QUARTILE_CONVENTION: &str = "median of halves: q1 and q3 are the medians of the lower and upper \
halves of the sorted values; for odd counts the median itself belongs to neither half; a single value \
gives q1 = q3 = that value";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    /// Five-number summary; `None` for an empty input.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = median_sorted(&v)?;
        let (lower, upper) = if n == 1 {
            (&v[..], &v[..])
        } else {
            (&v[..n / 2], &v[n.div_ceil(2)..])
        };
        Some(Self {
            n,
            min: v[0],
            q1: median_sorted(lower)?,
            median,
            q3: median_sorted(upper)?,
            max: v[n - 1],
        })
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One box per `(label, stats)` on a shared vertical axis starting at 0.
pub fn render_boxplot_svg(title: &str, y_label: &str, boxes: &[(String, BoxStats)]) -> String {
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 110.0);
    let slot = 70.0;
    let plot_h = 300.0;
    let width = left + right + slot * boxes.len().max(1) as f64;
    let height = top + plot_h + bottom;
    let y_max = boxes.iter().map(|(_, b)| b.max).fold(0.0, f64::max);
    let y_max = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };
    let y = |v: f64| top + plot_h * (1.0 - v / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        top + plot_h
    );
    for k in 0..=5 {
        let v = y_max * k as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{yy:.2}" x2="{}" y2="{yy:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"##,
            left,
            width - right,
            left - 6.0,
            yy + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        escape(y_label)
    );
    for (i, (label, b)) in boxes.iter().enumerate() {
        let cx = left + slot * (i as f64 + 0.5);
        let half = slot * 0.3;
        let _ = writeln!(
            s,
            r#"<line x1="{cx}" y1="{:.2}" x2="{cx}" y2="{:.2}" stroke="black"/>"#,
            y(b.max),
            y(b.q3)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{cx}" y1="{:.2}" x2="{cx}" y2="{:.2}" stroke="black"/>"#,
            y(b.q1),
            y(b.min)
        );
        for v in [b.min, b.max] {
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="black"/>"#,
                cx - half / 2.0,
                y(v),
                cx + half / 2.0,
                y(v)
            );
        }
        let _ = writeln!(
            s,
            r##"<rect x="{}" y="{:.2}" width="{}" height="{:.2}" fill="#9ecae1" stroke="black"/>"##,
            cx - half,
            y(b.q3),
            2.0 * half,
            (y(b.q1) - y(b.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            y(b.median),
            cx + half,
            y(b.median)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate({cx},{}) rotate(45)">{}</text>"#,
            top + plot_h + 14.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_halves() {
        let b = BoxStats::from_values(&[7.0, 1.0, 3.0, 5.0, 9.0]).unwrap();
        assert_eq!(
            (b.min, b.q1, b.median, b.q3, b.max),
            (1.0, 2.0, 5.0, 8.0, 9.0)
        );
        let b = BoxStats::from_values(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (1.5, 2.5, 3.5));
        let b = BoxStats::from_values(&[4.0]).unwrap();
        assert_eq!(
            (b.min, b.q1, b.median, b.q3, b.max),
            (4.0, 4.0, 4.0, 4.0, 4.0)
        );
        assert!(BoxStats::from_values(&[]).is_none());
    }

    #[test]
    fn constant_values_give_degenerate_box() {
        let b = BoxStats::from_values(&[0.2; 6]).unwrap();
        assert!([b.min, b.q1, b.median, b.q3, b.max]
            .iter()
            .all(|&v| v == 0.2));
    }

    #[test]
    fn svg_has_one_box_per_group() {
        let b = BoxStats::from_values(&[0.1, 0.2, 0.3]).unwrap();
        let svg = render_boxplot_svg("t", "y", &[("a<b".into(), b), ("c".into(), b)]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("fill=\"#9ecae1\"").count(), 2);
        assert!(svg.contains("a&lt;b"));
    }
}
