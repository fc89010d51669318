//! Minimal SVG plots: sparsification curves and the 1D experiment panels.

use std::fmt::Write as _;

use crate::sparsify::SparsificationResult;
use crate::toy1d::{ToyRun, TEST_RANGE, TRAIN_RANGE};

const MARGIN: f64 = 40.0;

struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        let t = ((y - self.y.0) / (self.y.1 - self.y.0)).clamp(-0.05, 1.05);
        self.top + (1.0 - t) * self.height
    }

    fn points(&self, xs: &[f64], ys: &[f64]) -> String {
        let mut s = String::new();
        for (x, y) in xs.iter().zip(ys) {
            let _ = write!(s, "{:.2},{:.2} ", self.px(*x), self.py(*y));
        }
        s.trim_end().to_string()
    }

    fn axes(&self, out: &mut String, title: &str) {
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            self.left, self.top, self.width, self.height
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            self.left + self.width / 2.0,
            self.top - 6.0,
            escape(title)
        );
        for (v, anchor, x, y) in [
            (self.x.0, "start", self.left, self.top + self.height + 14.0),
            (self.x.1, "end", self.left + self.width, self.top + self.height + 14.0),
        ] {
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{y:.2}" font-size="10" text-anchor="{anchor}">{v:.2}</text>"#);
        }
        for (v, y) in [(self.y.0, self.top + self.height), (self.y.1, self.top + 10.0)] {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{y:.2}" font-size="10" text-anchor="end">{v:.2}</text>"#,
                self.left - 4.0
            );
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Predicted and oracle curves against the removed fraction.
pub fn curves_svg(result: &SparsificationResult, title: &str) -> String {
    let (w, h) = (480.0, 320.0);
    let top = result
        .predicted_curve
        .iter()
        .chain(&result.oracle_curve)
        .copied()
        .fold(0.0, f64::max);
    let frame = Frame {
        left: MARGIN + 10.0,
        top: MARGIN,
        width: w - 2.0 * MARGIN - 10.0,
        height: h - 2.0 * MARGIN,
        x: (0.0, result.fractions.last().copied().unwrap_or(1.0).max(1e-9)),
        y: (0.0, if top > 0.0 { top } else { 1.0 }),
    };
    let mut out = header(w, h);
    frame.axes(&mut out, title);
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="black" stroke-dasharray="5,3" points="{}"/>"#,
        frame.points(&result.fractions, &result.oracle_curve)
    );
    let _ = writeln!(
        out,
        r##"<polyline fill="none" stroke="#1f5fbf" stroke-width="1.5" points="{}"/>"##,
        frame.points(&result.fractions, &result.predicted_curve)
    );
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-size="10" fill="#1f5fbf">predicted</text><text x="{:.2}" y="{:.2}" font-size="10">oracle (dashed)</text>"##,
        frame.left + 8.0,
        frame.top + 14.0,
        frame.left + 8.0,
        frame.top + 28.0
    );
    out.push_str("</svg>\n");
    out
}

/// One panel per method: true curve, training samples, predicted mean and
/// 1σ / 2σ bands over the test range.
pub fn toy_svg(run: &ToyRun) -> String {
    let (pw, ph) = (420.0, 260.0);
    let cols = 2;
    let rows = run.estimates.len().div_ceil(cols).max(1);
    let (w, h) = (pw * cols as f64, ph * rows as f64);
    let truth = &run.dataset.truth;
    let lo = truth.grid_y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = truth.grid_y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.5 * (hi - lo).max(1.0);

    let mut order: Vec<usize> = (0..run.dataset.test_x.len()).collect();
    order.sort_by(|&a, &b| run.dataset.test_x[a].total_cmp(&run.dataset.test_x[b]));
    let xs: Vec<f64> = order.iter().map(|&i| run.dataset.test_x[i]).collect();

    let mut out = header(w, h);
    for (k, est) in run.estimates.iter().enumerate() {
        let frame = Frame {
            left: (k % cols) as f64 * pw + MARGIN,
            top: (k / cols) as f64 * ph + MARGIN - 10.0,
            width: pw - 1.5 * MARGIN,
            height: ph - 1.75 * MARGIN,
            x: TEST_RANGE,
            y: (lo - pad, hi + pad),
        };
        let train_band = (frame.px(TRAIN_RANGE.0), frame.px(TRAIN_RANGE.1));
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#f4f4f4"/>"##,
            train_band.0,
            frame.top,
            train_band.1 - train_band.0,
            frame.height
        );
        let mean: Vec<f64> = order.iter().map(|&i| est.points[i].mean).collect();
        let sigma: Vec<f64> = order.iter().map(|&i| est.points[i].sigma).collect();
        for (z, colour) in [(2.0, "#f6c9c9"), (1.0, "#ec9393")] {
            let upper: Vec<f64> = mean.iter().zip(&sigma).map(|(m, s)| m + z * s).collect();
            let lower: Vec<f64> = mean.iter().zip(&sigma).map(|(m, s)| m - z * s).collect();
            let back: Vec<f64> = xs.iter().rev().copied().collect();
            let lower_rev: Vec<f64> = lower.iter().rev().copied().collect();
            let _ = writeln!(
                out,
                r#"<polygon fill="{colour}" stroke="none" points="{} {}"/>"#,
                frame.points(&xs, &upper),
                frame.points(&back, &lower_rev)
            );
        }
        for (x, y) in run.dataset.train_x.iter().zip(&run.dataset.train_y).step_by(5) {
            let _ = writeln!(
                out,
                r##"<circle cx="{:.2}" cy="{:.2}" r="1.2" fill="#777"/>"##,
                frame.px(*x),
                frame.py(*y)
            );
        }
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="black" stroke-width="1" points="{}"/>"#,
            frame.points(&truth.grid_x, &truth.grid_y)
        );
        let _ = writeln!(
            out,
            r##"<polyline fill="none" stroke="#b01818" stroke-width="1.5" points="{}"/>"##,
            frame.points(&xs, &mean)
        );
        frame.axes(&mut out, est.kind.label());
    }
    out.push_str("</svg>\n");
    out
}
