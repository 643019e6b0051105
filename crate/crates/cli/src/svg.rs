//! Minimal self-contained SVG scatter plots.

use std::fmt::Write as _;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 24.0;
const BAR: f64 = 14.0;

// viridis at t = 0, 0.25, 0.5, 0.75, 1
const STOPS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Color for `t` in `[0, 1]` (clamped).
pub fn colormap(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c: Vec<u8> = (0..3)
        .map(|k| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// The two coordinate axes with the largest extent, in axis order.
pub fn projection_axes(points: &[[f64; 3]]) -> (usize, usize) {
    let extent = |a: usize| {
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[a]), hi.max(p[a])));
        hi - lo
    };
    let mut axes = [0, 1, 2];
    axes.sort_by(|&a, &b| extent(b).total_cmp(&extent(a)).then(a.cmp(&b)));
    (axes[0].min(axes[1]), axes[0].max(axes[1]))
}

/// Orthographic scatter of `points` onto `axes`, colored by `values`
/// mapped linearly from `range` onto the colormap.
pub fn scatter(title: &str, points: &[[f64; 3]], values: &[f64], axes: (usize, usize), range: (f64, f64)) -> String {
    let (ax, ay) = axes;
    let bounds = |a: usize| {
        points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[a]), hi.max(p[a])))
    };
    let ((x0, x1), (y0, y1)) = (bounds(ax), bounds(ay));
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let plot = SIZE - 2.0 * MARGIN;
    let (lo, hi) = range;
    let norm = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };

    let mut s = String::new();
    let height = SIZE + 2.0 * BAR + MARGIN;
    writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{height}" viewBox="0 0 {SIZE} {height}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{MARGIN}" y="16" font-family="sans-serif" font-size="12">{}</text>"#,
        escape(title)
    )
    .unwrap();
    for (p, &v) in points.iter().zip(values) {
        let cx = MARGIN + (p[ax] - x0) / span * plot;
        let cy = SIZE - MARGIN - (p[ay] - y0) / span * plot;
        writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2.2" fill="{}"/>"#, colormap(norm(v))).unwrap();
    }
    // color bar shared by every plot drawn with the same range
    let steps = 64;
    let w = plot / steps as f64;
    let top = SIZE;
    for i in 0..steps {
        let t = (i as f64 + 0.5) / steps as f64;
        writeln!(
            s,
            r#"<rect x="{:.2}" y="{top}" width="{:.2}" height="{BAR}" fill="{}"/>"#,
            MARGIN + i as f64 * w,
            w + 0.5,
            colormap(t)
        )
        .unwrap();
    }
    let label_y = top + 2.0 * BAR + 2.0;
    writeln!(
        s,
        r#"<text x="{MARGIN}" y="{label_y}" font-family="sans-serif" font-size="11">{lo:.4}</text>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{label_y}" font-family="sans-serif" font-size="11" text-anchor="end">{hi:.4}</text>"#,
        SIZE - MARGIN
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), "#440154");
        assert_eq!(colormap(1.0), "#fde725");
        assert_eq!(colormap(7.0), colormap(1.0));
        assert_eq!(colormap(f64::NAN), colormap(0.0));
    }

    #[test]
    fn flat_cloud_projects_onto_its_plane() {
        let pts = [[0.0, 0.0, 5.0], [1.0, 0.0, 5.0], [0.0, 2.0, 5.0]];
        assert_eq!(projection_axes(&pts), (0, 1));
    }

    #[test]
    fn scatter_has_one_circle_per_point() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]];
        let svg = scatter("a<b", &pts, &[0.0, 1.0], (0, 1), (0.0, 1.0));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("href"));
    }
}
