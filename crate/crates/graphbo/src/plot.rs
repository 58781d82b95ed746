//! Minimal self-contained SVG line plots for regret curves: mean lines with
//! shaded 95% confidence bands, one color per method. No drawing
//! dependencies; output is a deterministic function of the input rows.

use crate::experiment::AggregateRow;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 52.0;

const PALETTE: [&str; 8] = [
    "#2563eb", "#dc2626", "#059669", "#d97706", "#7c3aed", "#0891b2", "#be185d", "#4b5563",
];

fn fmt_coord(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_tick(v: f64) -> String {
    // round away float dust so tick labels stay short
    let r = (v * 1e6).round() / 1e6;
    format!("{r}")
}

/// Evenly spaced "nice" tick positions covering [lo, hi].
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let range = (hi - lo).max(f64::MIN_POSITIVE);
    let raw_step = range / target.max(1) as f64;
    let mag = 10f64.powf(raw_step.log10().floor());
    let norm = raw_step / mag;
    let step = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    } * mag;
    let first = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut v = first;
    while v <= hi + step * 1e-9 {
        out.push(v);
        v += step;
    }
    out
}

struct Series<'a> {
    name: &'a str,
    points: Vec<(f64, f64, f64)>, // iteration, mean, ci
}

/// Render mean-regret curves with 95% confidence bands to a standalone SVG
/// document string.
pub fn regret_plot(rows: &[AggregateRow], title: &str) -> String {
    let mut series: Vec<Series> = Vec::new();
    for row in rows {
        match series.iter_mut().find(|s| s.name == row.method) {
            Some(s) => s
                .points
                .push((row.iteration as f64, row.mean_regret, row.ci95)),
            None => series.push(Series {
                name: &row.method,
                points: vec![(row.iteration as f64, row.mean_regret, row.ci95)],
            }),
        }
    }
    for s in &mut series {
        s.points
            .sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite iterations"));
    }

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"Helvetica, Arial, sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"26\" font-size=\"17\" text-anchor=\"middle\" fill=\"#111111\">{}</text>\n",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        escape(title)
    ));
    if series.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }

    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for s in &series {
        for &(_, m, c) in &s.points {
            y_lo = y_lo.min(m - c);
            y_hi = y_hi.max(m + c);
        }
    }
    if !(y_hi > y_lo) {
        let pad = if y_hi == 0.0 { 1.0 } else { y_hi.abs() * 0.5 };
        y_lo -= pad;
        y_hi += pad;
    }
    let pad = (y_hi - y_lo) * 0.06;
    y_lo = (y_lo - pad).min(0.0);
    y_hi += pad;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + x / x_max * plot_w;
    let sy = |y: f64| MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    // grid + axis ticks
    for t in ticks(y_lo, y_hi, 5) {
        let y = sy(t);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"#e5e7eb\" stroke-width=\"1\"/>\n",
            fmt_coord(MARGIN_LEFT),
            fmt_coord(WIDTH - MARGIN_RIGHT),
            y = y
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\" fill=\"#374151\">{}</text>\n",
            fmt_coord(MARGIN_LEFT - 8.0),
            y + 4.0,
            fmt_tick(t)
        ));
    }
    for t in ticks(0.0, x_max, 8) {
        let x = sx(t);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#e5e7eb\" stroke-width=\"1\"/>\n",
            fmt_coord(MARGIN_TOP),
            fmt_coord(HEIGHT - MARGIN_BOTTOM),
            x = x
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#374151\">{}</text>\n",
            x,
            fmt_coord(HEIGHT - MARGIN_BOTTOM + 18.0),
            fmt_tick(t)
        ));
    }
    // axes
    svg.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"#111111\" stroke-width=\"1.2\"/>\n\
         <line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#111111\" stroke-width=\"1.2\"/>\n",
        l = fmt_coord(MARGIN_LEFT),
        r = fmt_coord(WIDTH - MARGIN_RIGHT),
        t = fmt_coord(MARGIN_TOP),
        b = fmt_coord(HEIGHT - MARGIN_BOTTOM),
    ));
    // axis labels
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#111111\">iteration</text>\n",
        fmt_coord((MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0),
        fmt_coord(HEIGHT - 14.0)
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {c})\" fill=\"#111111\">simple regret</text>\n",
        fmt_coord(MARGIN_TOP + plot_h / 2.0),
        c = fmt_coord(MARGIN_TOP + plot_h / 2.0)
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        // confidence band: upper edge forward, lower edge back
        if s.points.iter().any(|p| p.2 > 0.0) && s.points.len() > 1 {
            let mut d = String::from("M");
            for &(x, m, c) in &s.points {
                d.push_str(&format!(" {},{}", fmt_coord(sx(x)), fmt_coord(sy(m + c))));
            }
            for &(x, m, c) in s.points.iter().rev() {
                d.push_str(&format!(" {},{}", fmt_coord(sx(x)), fmt_coord(sy(m - c))));
            }
            d.push_str(" Z");
            svg.push_str(&format!(
                "<path d=\"{d}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n"
            ));
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, m, _)| format!("{},{}", fmt_coord(sx(x)), fmt_coord(sy(m))))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            pts.join(" ")
        ));
        // legend entry
        let ly = MARGIN_TOP + 10.0 + i as f64 * 20.0;
        let lx = WIDTH - MARGIN_RIGHT + 14.0;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2.5\"/>\n",
            fmt_coord(lx),
            fmt_coord(ly),
            fmt_coord(lx + 22.0),
            fmt_coord(ly)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#111111\">{}</text>\n",
            fmt_coord(lx + 28.0),
            fmt_coord(ly + 4.0),
            escape(s.name)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iteration: usize, method: &str, mean: f64, ci: f64) -> AggregateRow {
        AggregateRow {
            iteration,
            method: method.into(),
            mean_regret: mean,
            ci95: ci,
        }
    }

    #[test]
    fn plot_contains_a_curve_and_band_per_method() {
        let rows = vec![
            row(0, "ours", 1.0, 0.2),
            row(1, "ours", 0.5, 0.1),
            row(2, "ours", 0.2, 0.05),
            row(0, "random", 1.0, 0.3),
            row(1, "random", 0.9, 0.3),
            row(2, "random", 0.8, 0.2),
        ];
        let svg = regret_plot(&rows, "test title");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("fill-opacity=\"0.15\"").count(), 2);
        assert!(svg.contains(">ours</text>"));
        assert!(svg.contains(">random</text>"));
        assert!(svg.contains("test title"));
    }

    #[test]
    fn plot_is_deterministic_and_handles_degenerate_input() {
        let rows = vec![row(0, "only", 0.0, 0.0)];
        let a = regret_plot(&rows, "t");
        let b = regret_plot(&rows, "t");
        assert_eq!(a, b);
        assert_eq!(a.matches("<polyline").count(), 1);
        // zero-width interval: no band polygon
        assert_eq!(a.matches("fill-opacity").count(), 0);
        // empty input still yields a document
        let empty = regret_plot(&[], "t");
        assert!(empty.contains("</svg>"));
    }

    #[test]
    fn tick_positions_are_nice_and_cover_the_range() {
        let t = ticks(0.0, 1.0, 5);
        assert_eq!(t.first().copied(), Some(0.0));
        assert!(t.len() >= 4 && t.len() <= 8);
        for w in t.windows(2) {
            assert!((w[1] - w[0] - 0.2).abs() < 1e-12);
        }
        let t = ticks(0.0, 200.0, 8);
        assert!(t.iter().all(|v| v % 25.0 == 0.0 || v % 20.0 == 0.0));
    }

    #[test]
    fn labels_are_escaped() {
        let rows = vec![row(0, "a<b&c", 1.0, 0.0), row(1, "a<b&c", 0.5, 0.0)];
        let svg = regret_plot(&rows, "x < y");
        assert!(svg.contains("a&lt;b&amp;c"));
        assert!(svg.contains("x &lt; y"));
        assert!(!svg.contains("a<b"));
    }
}
