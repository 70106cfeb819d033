//! Hand-written reliability diagram.
//!
//! The plot area is a square `<rect class="plot-area">`; a bin is drawn as a
//! circle at (mean predicted, fraction positive) with radius proportional to
//! the square root of its share of the examples.

use std::fmt::Write;

use venncal_core::ReliabilityBins;

const CANVAS: f64 = 600.0;
const MARGIN: f64 = 70.0;
const PLOT: f64 = CANVAS - 2.0 * MARGIN;
const MAX_RADIUS: f64 = 40.0;

fn px(x: f64) -> f64 {
    MARGIN + PLOT * x
}

fn py(y: f64) -> f64 {
    MARGIN + PLOT * (1.0 - y)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn reliability_svg(bins: &ReliabilityBins, title: &str) -> String {
    let mut s = String::new();
    let total = bins.total().max(1) as f64;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{CANVAS}" height="{CANVAS}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="16">{}</text>"#,
        CANVAS / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect class="plot-area" x="{MARGIN}" y="{MARGIN}" width="{PLOT}" height="{PLOT}" fill="none" stroke="black"/>"#
    );

    for i in 0..=10 {
        let t = i as f64 / 10.0;
        let label = format!("{t:.1}");
        let (x, y) = (px(t), py(t));
        let bottom = MARGIN + PLOT;
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{bottom}" x2="{x}" y2="{}" stroke="black"/>"#,
            bottom + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{label}</text>"#,
            bottom + 20.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y}" x2="{MARGIN}" y2="{y}" stroke="black"/>"#,
            MARGIN - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#,
            MARGIN - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">mean predicted probability</text>"#,
        CANVAS / 2.0,
        CANVAS - 20.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">fraction of positives</text>"#,
        CANVAS / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line class="diagonal" x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="6 4"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );

    for bin in bins.bins() {
        let (Some(x), Some(y)) = (bin.mean_pred(), bin.frac_pos()) else {
            continue;
        };
        let r = MAX_RADIUS * (bin.count as f64 / total).sqrt();
        let _ = writeln!(
            s,
            r#"<circle cx="{:.3}" cy="{:.3}" r="{:.3}" fill="steelblue" fill-opacity="0.6" stroke="navy"><title>n={}</title></circle>"#,
            px(x),
            py(y),
            r,
            bin.count
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use venncal_core::metrics::reliability_bins;

    #[test]
    fn empty_bins_are_skipped() {
        let bins = reliability_bins(&[0.05, 0.95, 0.97], &[0, 1, 1], 10).unwrap();
        let svg = reliability_svg(&bins, "a < b");
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn coordinates_map_unit_square_to_plot_area() {
        assert_eq!((px(0.0), py(0.0)), (MARGIN, MARGIN + PLOT));
        assert_eq!((px(1.0), py(1.0)), (MARGIN + PLOT, MARGIN));
    }
}
