//! Minimal deterministic SVG rate-PSNR plots: one panel per task, one
//! polyline per (dataset, model family) curve.

use std::fmt::Write as _;

use crate::curves::CurveRecord;

const PALETTE: [&str; 6] = ["#d95f02", "#e6ab02", "#1b9e77", "#7570b3", "#e7298a", "#66a61e"];

struct Series<'a> {
    label: String,
    pts: Vec<&'a CurveRecord>,
}

/// Renders rate-PSNR curves for one task into an SVG document.
pub fn render_rate_psnr_svg(records: &[CurveRecord], task: &str, title: &str) -> String {
    let mut series: Vec<Series> = Vec::new();
    for r in records.iter().filter(|r| r.task == task) {
        let label = r.dataset.clone();
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.pts.push(r),
            None => series.push(Series { label, pts: vec![r] }),
        }
    }
    for s in series.iter_mut() {
        s.pts.sort_by(|a, b| a.bpp.partial_cmp(&b.bpp).unwrap());
    }

    let (w, h) = (640.0f64, 480.0f64);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);

    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in &series {
        for p in &s.pts {
            xmin = xmin.min(p.bpp);
            xmax = xmax.max(p.bpp);
            ymin = ymin.min(p.psnr);
            ymax = ymax.max(p.psnr);
        }
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    if xmax - xmin < 1e-9 {
        xmax = xmin + 1.0;
    }
    if ymax - ymin < 1e-9 {
        ymax = ymin + 1.0;
    }
    let padx = 0.05 * (xmax - xmin);
    let pady = 0.08 * (ymax - ymin);
    let (x0, x1, y0, y1) = (xmin - padx, xmax + padx, ymin - pady, ymax + pady);
    let sx = move |v: f64| ml + (v - x0) / (x1 - x0) * pw;
    let sy = move |v: f64| mt + (1.0 - (v - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = write!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n");
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        w / 2.0,
        xml_escape(title)
    );
    // Axes and ticks.
    let _ = write!(
        svg,
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#444\"/>\n"
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = write!(
            svg,
            "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{0:.1}\" y2=\"{2:.1}\" stroke=\"#ccc\"/>\n",
            sx(fx),
            mt,
            mt + ph
        );
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.3}</text>\n",
            sx(fx),
            mt + ph + 18.0,
            fx
        );
        let _ = write!(
            svg,
            "<line x1=\"{0}\" y1=\"{1:.1}\" x2=\"{2}\" y2=\"{1:.1}\" stroke=\"#ccc\"/>\n",
            ml,
            sy(fy),
            ml + pw
        );
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.2}</text>\n",
            ml - 6.0,
            sy(fy) + 4.0,
            fy
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">bits per pixel</text>\n",
        ml + pw / 2.0,
        h - 12.0
    );
    let _ = write!(
        svg,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">PSNR (dB)</text>\n",
        mt + ph / 2.0,
        mt + ph / 2.0
    );

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut path = String::new();
        for (k, p) in s.pts.iter().enumerate() {
            let _ = write!(path, "{}{:.2},{:.2}", if k == 0 { "M" } else { "L" }, sx(p.bpp), sy(p.psnr));
        }
        let _ = write!(svg, "<path d=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n");
        for p in &s.pts {
            let _ = write!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(p.bpp),
                sy(p.psnr)
            );
        }
        let ly = mt + 16.0 + 16.0 * si as f64;
        let _ = write!(
            svg,
            "<line x1=\"{0}\" y1=\"{ly}\" x2=\"{1}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            ml + pw - 130.0,
            ml + pw - 105.0
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            ml + pw - 100.0,
            ly + 4.0,
            xml_escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
