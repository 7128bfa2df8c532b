//! Hand-written SVG panels for case studies: cohort histograms for
//! aggregated features and hourly box plots with the patient's series
//! overlaid for vital channels. Important hours are marked in red.

use std::fmt::Write;

use crate::case_study::{AggregatedPanel, VitalPanel};

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 240.0;
const LEFT: f64 = 48.0;
const RIGHT: f64 = 12.0;
const TOP: f64 = 28.0;
const BOTTOM: f64 = 32.0;

/// Maps data coordinates to panel pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub slots: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Frame {
    fn plot_width(&self) -> f64 {
        WIDTH - LEFT - RIGHT
    }

    /// Centre of slot `i` (0-based).
    pub fn x_slot(&self, i: usize) -> f64 {
        LEFT + (i as f64 + 0.5) * self.plot_width() / self.slots as f64
    }

    /// Horizontal position of a value in `[lo, hi]` on a value axis.
    pub fn x_value(&self, v: f64) -> f64 {
        LEFT + (v - self.lo) / (self.hi - self.lo) * self.plot_width()
    }

    pub fn y(&self, v: f64) -> f64 {
        TOP + (self.hi - v) / (self.hi - self.lo) * (HEIGHT - TOP - BOTTOM)
    }
}

/// Frame of a vital panel: one slot per hour, value axis covering `[0, 1]`
/// and every plotted value.
pub fn vital_frame(panel: &VitalPanel) -> Frame {
    let values = panel
        .hours
        .iter()
        .flat_map(|b| [b.min, b.max])
        .chain(panel.patient_values.iter().copied());
    let (lo, hi) = values.fold((0.0f64, 1.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Frame {
        slots: panel.hours.len(),
        lo,
        hi,
    }
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(
        out,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{LEFT}\" y=\"18\" font-size=\"13\">{}</text>",
        escape(title)
    );
}

fn axes(out: &mut String, frame: &Frame) {
    let (x0, x1) = (px(LEFT), px(WIDTH - RIGHT));
    let (y0, y1) = (px(TOP), px(HEIGHT - BOTTOM));
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y1}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    for v in [frame.lo, frame.hi] {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.2}</text>",
            px(LEFT - 4.0),
            px(frame.y(v) + 4.0)
        );
    }
}

/// Box plot per hour, the patient's series as a polyline, flagged hours as
/// red circles on that line.
pub fn render_vital_panel(panel: &VitalPanel) -> String {
    let frame = vital_frame(panel);
    let mut out = String::new();
    open(&mut out, &panel.name);
    axes(&mut out, &frame);
    let half = 0.3 * (WIDTH - LEFT - RIGHT) / frame.slots as f64;
    for (i, b) in panel.hours.iter().enumerate() {
        let x = frame.x_slot(i);
        let _ = writeln!(
            out,
            "<line class=\"whisker\" x1=\"{x}\" y1=\"{lo}\" x2=\"{x}\" y2=\"{hi}\" stroke=\"gray\"/>",
            x = px(x),
            lo = px(frame.y(b.min)),
            hi = px(frame.y(b.max))
        );
        let _ = writeln!(
            out,
            "<rect class=\"box\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#dde6f0\" stroke=\"gray\"/>",
            px(x - half),
            px(frame.y(b.q3)),
            px(2.0 * half),
            px(frame.y(b.q1) - frame.y(b.q3))
        );
        let _ = writeln!(
            out,
            "<line class=\"median\" x1=\"{}\" y1=\"{m}\" x2=\"{}\" y2=\"{m}\" stroke=\"black\"/>",
            px(x - half),
            px(x + half),
            m = px(frame.y(b.median))
        );
        if (i + 1) % 4 == 0 || i == 0 {
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                px(x),
                px(HEIGHT - BOTTOM + 14.0),
                i + 1
            );
        }
    }
    let points: Vec<String> = panel
        .patient_values
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("{},{}", px(frame.x_slot(i)), px(frame.y(v))))
        .collect();
    let _ = writeln!(
        out,
        "<polyline class=\"patient\" points=\"{}\" fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"1.5\"/>",
        points.join(" ")
    );
    for &h in &panel.flagged_hours {
        let v = panel.patient_values[h - 1];
        let _ = writeln!(
            out,
            "<circle class=\"flagged\" data-hour=\"{h}\" cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"red\"/>",
            px(frame.x_slot(h - 1)),
            px(frame.y(v))
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Cohort histogram with the patient's value as a red marker.
pub fn render_aggregated_panel(panel: &AggregatedPanel) -> String {
    let frame = Frame {
        slots: panel.histogram.len(),
        lo: 0.0,
        hi: 1.0,
    };
    let peak = panel.histogram.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut out = String::new();
    open(&mut out, &panel.name);
    axes(&mut out, &frame);
    let width = (WIDTH - LEFT - RIGHT) / frame.slots as f64;
    for (i, &c) in panel.histogram.iter().enumerate() {
        let top = frame.y(c as f64 / peak);
        let _ = writeln!(
            out,
            "<rect class=\"bin\" data-count=\"{c}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#9db4d3\" stroke=\"white\"/>",
            px(LEFT + i as f64 * width),
            px(top),
            px(width),
            px(frame.y(0.0) - top)
        );
    }
    let x = frame.x_value(panel.patient_value.clamp(0.0, 1.0));
    let _ = writeln!(
        out,
        "<line class=\"patient\" data-value=\"{}\" x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"red\" stroke-width=\"2\"/>",
        panel.patient_value,
        px(TOP),
        px(HEIGHT - BOTTOM),
        x = px(x)
    );
    out.push_str("</svg>\n");
    out
}
