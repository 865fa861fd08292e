//! Minimal SVG plots of confidence bands.
//!
//! The vertical range follows the data and the truth. Bands that run far
//! outside it are clipped to the plot frame and a note gives their true
//! extent, so a vacuous band does not flatten everything else to a line.

use std::fmt::Write as _;

use crate::band::Band;
use crate::harness::{Dataset, TrueFunction};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 50.0;
const TRUTH_SAMPLES: usize = 400;

/// A band with its fill color and legend label.
pub struct BandLayer<'a> {
    pub band: &'a Band,
    pub color: &'a str,
    pub label: &'a str,
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        let y = y.clamp(self.y_lo, self.y_hi);
        HEIGHT - MARGIN - (y - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn frame(layers: &[BandLayer], truth: Option<&TrueFunction>, data: Option<&Dataset>) -> Frame {
    let mut x_lo = 0.0f64;
    let mut x_hi = 1.0f64;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for layer in layers {
        if let (Some(first), Some(last)) = (layer.band.grid.first(), layer.band.grid.last()) {
            x_lo = x_lo.min(*first);
            x_hi = x_hi.max(*last);
        }
    }
    if let Some(data) = data {
        for (&x, &y) in data.x.iter().zip(data.y.iter()) {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
    }
    if let Some(f) = truth {
        for j in 0..=TRUTH_SAMPLES {
            let y = f.eval(x_lo + (x_hi - x_lo) * j as f64 / TRUTH_SAMPLES as f64);
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
    }
    if !y_lo.is_finite() {
        // bands only: take their finite range
        for layer in layers {
            for (&l, &u) in layer.band.lower.iter().zip(layer.band.upper.iter()) {
                if l.is_finite() && u.is_finite() {
                    y_lo = y_lo.min(l);
                    y_hi = y_hi.max(u);
                }
            }
        }
    }
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (-1.0, 1.0);
    }
    let pad = 0.5 * (y_hi - y_lo).max(1e-6);
    Frame { x_lo, x_hi, y_lo: y_lo - pad, y_hi: y_hi + pad }
}

/// Renders bands (drawn in order), the truth and the sample points.
pub fn render(title: &str, layers: &[BandLayer], truth: Option<&TrueFunction>, data: Option<&Dataset>) -> String {
    let fr = frame(layers, truth, data);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ =
        writeln!(s, r#"<text x="{}" y="30" font-size="16" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));

    let mut notes = Vec::new();
    for (idx, layer) in layers.iter().enumerate() {
        let b = layer.band;
        let feasible: Vec<usize> = (0..b.len()).filter(|&j| b.lower[j].is_finite() && b.upper[j].is_finite()).collect();
        if !feasible.is_empty() {
            let mut pts = String::new();
            for &j in &feasible {
                let _ = write!(pts, "{:.2},{:.2} ", fr.px(b.grid[j]), fr.py(b.upper[j]));
            }
            for &j in feasible.iter().rev() {
                let _ = write!(pts, "{:.2},{:.2} ", fr.px(b.grid[j]), fr.py(b.lower[j]));
            }
            let _ = writeln!(
                s,
                r#"<polygon class="band" points="{}" fill="{}" fill-opacity="0.35" stroke="{}"/>"#,
                pts.trim_end(),
                layer.color,
                layer.color
            );
            let lo = feasible.iter().map(|&j| b.lower[j]).fold(f64::INFINITY, f64::min);
            let hi = feasible.iter().map(|&j| b.upper[j]).fold(f64::NEG_INFINITY, f64::max);
            if lo < fr.y_lo || hi > fr.y_hi {
                notes.push(format!("{} clipped, actual range [{lo:.3e}, {hi:.3e}]", layer.label));
            }
        }
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="14" height="14" fill="{}" fill-opacity="0.35"/><text x="{}" y="{}" font-size="12">{}</text>"#,
            WIDTH - MARGIN - 200.0,
            MARGIN + 8.0 + 20.0 * idx as f64,
            layer.color,
            WIDTH - MARGIN - 180.0,
            MARGIN + 19.0 + 20.0 * idx as f64,
            escape(layer.label)
        );
    }

    if let Some(f) = truth {
        let mut pts = String::new();
        for j in 0..=TRUTH_SAMPLES {
            let x = fr.x_lo + (fr.x_hi - fr.x_lo) * j as f64 / TRUTH_SAMPLES as f64;
            let _ = write!(pts, "{:.2},{:.2} ", fr.px(x), fr.py(f.eval(x)));
        }
        let _ = writeln!(
            s,
            r#"<polyline class="truth" points="{}" fill="none" stroke="black" stroke-width="2"/>"#,
            pts.trim_end()
        );
    }
    if let Some(data) = data {
        for (&x, &y) in data.x.iter().zip(data.y.iter()) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="dimgray"/>"#, fr.px(x), fr.py(y));
        }
    }
    for (idx, note) in notes.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{MARGIN}" y="{}" font-size="11" fill="firebrick">{}</text>"#,
            HEIGHT - 28.0 + 13.0 * idx as f64,
            escape(note)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{}" font-size="11">y range [{:.3}, {:.3}]</text>"#,
        MARGIN - 6.0,
        fr.y_lo,
        fr.y_hi
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band::PointStatus;

    fn flat_band(lo: f64, hi: f64) -> Band {
        let grid: Vec<f64> = (0..11).map(|j| j as f64 / 10.0).collect();
        Band {
            lower: vec![lo; grid.len()],
            upper: vec![hi; grid.len()],
            status: vec![PointStatus::Feasible; grid.len()],
            grid,
        }
    }

    #[test]
    fn clipped_band_gets_a_note() {
        let data = Dataset { x: vec![0.1, 0.9], y: vec![0.0, 1.0] };
        let wide = flat_band(-1e6, 1e6);
        let svg = render("t", &[BandLayer { band: &wide, color: "steelblue", label: "wide" }], None, Some(&data));
        assert!(svg.contains("wide clipped"));
        let narrow = flat_band(0.2, 0.8);
        let svg = render("t", &[BandLayer { band: &narrow, color: "steelblue", label: "narrow" }], None, Some(&data));
        assert!(!svg.contains("clipped"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
