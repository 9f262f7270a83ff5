//! SVG heatmaps of one time slice: one square per grid cell on a fixed
//! blue-to-red ramp, with a legend bar labelled by the slice min and max.

use std::fmt::Write as _;

use orca_core::GridField;

/// Pixels per grid cell.
pub const CELL_PX: usize = 16;
const LEGEND_PX: usize = 60;

/// Linear ramp from blue (0) through white (0.5) to red (1).
pub fn ramp(x: f64) -> (u8, u8, u8) {
    let x = if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64, t: f64| (a + (b - a) * t).round() as u8;
    if x < 0.5 {
        let t = x * 2.0;
        (lerp(33.0, 247.0, t), lerp(102.0, 247.0, t), lerp(172.0, 247.0, t))
    } else {
        let t = (x - 0.5) * 2.0;
        (lerp(247.0, 178.0, t), lerp(247.0, 24.0, t), lerp(247.0, 43.0, t))
    }
}

pub fn render_heatmap(field: &GridField, step: usize, title: &str) -> String {
    let frame = field.frame(step);
    let (rows, cols) = (field.rows(), field.cols());
    let lo = frame.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = frame.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = (cols * CELL_PX, rows * CELL_PX);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" shape-rendering="crispEdges">"#,
        w + LEGEND_PX,
        h + 24
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, title);
    let _ = writeln!(s, r#"<g id="cells">"#);
    for r in 0..rows {
        for c in 0..cols {
            let v = frame[r * cols + c] as f64;
            let (cr, cg, cb) = ramp((v - lo) / span);
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#{:02x}{:02x}{:02x}"><title>{:.3}</title></rect>"##,
                c * CELL_PX,
                r * CELL_PX,
                CELL_PX,
                CELL_PX,
                cr,
                cg,
                cb,
                v
            );
        }
    }
    s.push_str("</g>\n");
    let _ = writeln!(s, r#"<g id="legend">"#);
    let steps = 32;
    let bar_h = h as f64 / steps as f64;
    for i in 0..steps {
        let (cr, cg, cb) = ramp(1.0 - (i as f64 + 0.5) / steps as f64);
        let _ = writeln!(
            s,
            r##"<rect x="{}" y="{:.2}" width="12" height="{:.2}" fill="#{:02x}{:02x}{:02x}"/>"##,
            w + 8,
            i as f64 * bar_h,
            bar_h + 0.5,
            cr,
            cg,
            cb
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="10" font-size="10" font-family="sans-serif">max {:.3} m</text>"#, w + 22, hi);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" font-family="sans-serif">min {:.3} m</text>"#, w + 22, h, lo);
    s.push_str("</g>\n");
    let _ = writeln!(s, r#"<text x="2" y="{}" font-size="11" font-family="sans-serif">{}</text>"#, h + 16, title);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use orca_core::FieldRole;

    #[test]
    fn ramp_ends() {
        assert_eq!(ramp(0.0), (33, 102, 172));
        assert_eq!(ramp(1.0), (178, 24, 43));
        assert_eq!(ramp(0.5), (247, 247, 247));
    }

    #[test]
    fn one_rect_per_cell() {
        let values: Vec<f32> = (0..3 * 5 * 2).map(|i| i as f32).collect();
        let f = GridField::new(3, 5, 2, values, FieldRole::Estimate).unwrap();
        let svg = render_heatmap(&f, 1, "t=1");
        let cells = svg.split(r#"<g id="cells">"#).nth(1).unwrap().split("</g>").next().unwrap();
        assert_eq!(cells.matches("<rect").count(), 15);
        assert!(svg.contains(&format!(r#"width="{}""#, CELL_PX)));
        assert!(svg.contains("min 1.000 m") && svg.contains("max 29.000 m"));
    }
}
