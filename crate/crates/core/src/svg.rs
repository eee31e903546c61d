//! Minimal SVG output for accuracy curves and confusion matrices.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot with y fixed to [0, 1].
pub fn line_plot(title: &str, x_label: &str, series: &[Series<'_>]) -> String {
    let x_max = series
        .iter()
        .flat_map(|s| s.x.iter().copied())
        .fold(1.0f64, f64::max);
    let sx = |x: f64| PAD + x / x_max * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y.clamp(0.0, 1.0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{0}" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="11">{v:.1}</text>"#,
            PAD - 6.0,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = ser
            .x
            .iter()
            .zip(ser.y)
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            W - PAD - 110.0,
            PAD + 16.0 * i as f64,
            escape(ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Grayscale heatmap; darker cells hold larger values.
pub fn heatmap(title: &str, cells: &[Vec<f64>]) -> String {
    let n = cells.len().max(1) as f64;
    let max = cells.iter().flatten().copied().fold(0.0f64, f64::max);
    let side = (W.min(H) - 2.0 * PAD).max(1.0);
    let cell = side / n;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    for (i, row) in cells.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let shade = if max > 0.0 { 255.0 * (1.0 - v / max) } else { 255.0 };
            let g = shade.round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="rgb({g},{g},{g})"/>"#,
                PAD + j as f64 * cell,
                PAD + i as f64 * cell
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_well_formed() {
        let svg = line_plot(
            "a<b",
            "classes",
            &[Series { name: "icarl", x: &[10.0, 20.0], y: &[0.9, 0.8] }],
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b") && svg.contains("polyline"));
        let hm = heatmap("c", &[vec![0.0, 1.0], vec![2.0, 0.0]]);
        assert_eq!(hm.matches("<rect").count(), 5);
        assert!(hm.contains("rgb(0,0,0)"));
    }
}
