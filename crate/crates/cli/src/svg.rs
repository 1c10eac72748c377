//! Minimal deterministic SVG plots: fixed canvas, fixed decimal places, no
//! timestamps or random ids.

use std::fmt::Write;

use uqline_core::{BinnedTrend, PrrResult};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const CURVE_POINTS: usize = 101;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Maps data coordinates onto the plot area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            if hi - lo > 1e-12 {
                let m = 0.05 * (hi - lo);
                (lo - m, hi + m)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Self { x, y: pad(y) }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn polyline(&self, points: impl Iterator<Item = (f64, f64)>, style: &str) -> String {
        let coords: Vec<String> = points
            .map(|(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        format!("<polyline fill=\"none\" {style} points=\"{}\"/>\n", coords.join(" "))
    }
}

fn open(title: &str, frame: &Frame, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        s,
        "<path d=\"M{x0:.2},{y0:.2} L{x0:.2},{y1:.2} L{x1:.2},{y1:.2}\" stroke=\"black\" fill=\"none\"/>"
    );
    for (v, anchor) in [(frame.x.0, "start"), (frame.x.1, "end")] {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"{anchor}\">{v:.3}</text>",
            frame.px(v),
            y1 + 16.0
        );
    }
    for v in [frame.y.0, frame.y.1] {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.3}</text>",
            x0 - 6.0,
            frame.py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
    s
}

/// Binned means against normalized length with the fitted trend overlaid.
pub fn trend_plot(title: &str, y_label: &str, trend: &BinnedTrend) -> String {
    let points: Vec<(f64, f64)> = trend
        .bin_centers()
        .zip(&trend.bin_means)
        .filter_map(|(x, m)| m.map(|m| (x, m)))
        .collect();
    let curve: Vec<(f64, f64)> = (0..CURVE_POINTS)
        .map(|i| {
            let x = i as f64 / (CURVE_POINTS - 1) as f64;
            (x, trend.fit.predict(x))
        })
        .collect();
    let (lo, hi) = points
        .iter()
        .chain(&curve)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| {
            (lo.min(y), hi.max(y))
        });
    let frame = Frame::new((0.0, 1.0), (lo, hi));

    let mut s = open(title, &frame, "normalized length", y_label);
    for (x, y) in &points {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"steelblue\"/>",
            frame.px(*x),
            frame.py(*y)
        );
    }
    s.push_str(&frame.polyline(curve.into_iter(), "stroke=\"firebrick\" stroke-width=\"2\""));
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\">slope = {:.4}, p = {:.3e}, n = {}</text>",
        LEFT + 10.0,
        TOP + 14.0,
        trend.fit.slope(),
        trend.fit.p_value,
        trend.fit.n
    );
    s.push_str("</svg>\n");
    s
}

/// Prediction-rejection curves for the scored ordering and the oracle,
/// with the random baseline as a flat line.
pub fn prr_plot(title: &str, result: &PrrResult) -> String {
    let ys = result
        .curve_unc
        .iter()
        .chain(&result.curve_oracle)
        .map(|p| p.mean_quality)
        .chain([result.auc_rnd]);
    let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| {
        (lo.min(y), hi.max(y))
    });
    let frame = Frame::new((0.0, 1.0), (lo, hi));
    let mut s = open(title, &frame, "rejection rate", "mean retained quality");
    let curve = |c: &[uqline_core::prr::CurvePoint]| {
        c.iter()
            .map(|p| (p.rejection_rate, p.mean_quality))
            .collect::<Vec<_>>()
    };
    s.push_str(&frame.polyline(
        curve(&result.curve_oracle).into_iter(),
        "stroke=\"gray\" stroke-dasharray=\"4 3\"",
    ));
    s.push_str(&frame.polyline(
        [(0.0, result.auc_rnd), (1.0, result.auc_rnd)].into_iter(),
        "stroke=\"gray\"",
    ));
    s.push_str(&frame.polyline(
        curve(&result.curve_unc).into_iter(),
        "stroke=\"steelblue\" stroke-width=\"2\"",
    ));
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\">PRR = {:.4}, n = {}</text>",
        LEFT + 10.0,
        TOP + 14.0,
        result.prr,
        result.n
    );
    s.push_str("</svg>\n");
    s
}
