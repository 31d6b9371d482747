//! Minimal hand-rolled SVG charts: line plots with error bars and
//! scatter plots. No external renderer — the output is plain text and
//! diffs cleanly in review.

/// One plotted series; `err` draws symmetric vertical error bars.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub err: Option<Vec<f64>>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn fmt_coord(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.into()
    }
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_series(series: &[Series]) -> Frame {
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for s in series {
            for (k, (&x, &y)) in s.xs.iter().zip(&s.ys).enumerate() {
                if !x.is_finite() || !y.is_finite() {
                    continue;
                }
                let e = s.err.as_ref().map(|e| e[k]).unwrap_or(0.0);
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y - e);
                y_max = y_max.max(y + e);
            }
        }
        if !x_min.is_finite() {
            (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
        }
        if x_max - x_min < 1e-12 {
            x_min -= 0.5;
            x_max += 0.5;
        }
        if y_max - y_min < 1e-12 {
            y_min -= 0.5;
            y_max += 0.5;
        }
        let pad_x = 0.05 * (x_max - x_min);
        let pad_y = 0.05 * (y_max - y_min);
        Frame {
            x_min: x_min - pad_x,
            x_max: x_max + pad_x,
            y_min: y_min - pad_y,
            y_max: y_max + pad_y,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn chart_shell(title: &str, x_label: &str, y_label: &str, frame: &Frame, body: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{:.0}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        xml_escape(title)
    ));
    // Axes.
    out.push_str(&format!(
        "<line x1=\"{l:.1}\" y1=\"{b:.1}\" x2=\"{r:.1}\" y2=\"{b:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{l:.1}\" y1=\"{t:.1}\" x2=\"{l:.1}\" y2=\"{b:.1}\" stroke=\"black\"/>\n",
        l = MARGIN_L,
        r = WIDTH - MARGIN_R,
        t = MARGIN_T,
        b = HEIGHT - MARGIN_B
    ));
    // Ticks.
    for k in 0..=4 {
        let fx = frame.x_min + (frame.x_max - frame.x_min) * k as f64 / 4.0;
        let fy = frame.y_min + (frame.y_max - frame.y_min) * k as f64 / 4.0;
        let px = frame.px(fx);
        let py = frame.py(fy);
        out.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{b:.1}\" x2=\"{px:.1}\" y2=\"{b2:.1}\" stroke=\"black\"/>\n\
             <text x=\"{px:.1}\" y=\"{ty:.1}\" text-anchor=\"middle\">{}</text>\n",
            fmt_tick(fx),
            b = HEIGHT - MARGIN_B,
            b2 = HEIGHT - MARGIN_B + 5.0,
            ty = HEIGHT - MARGIN_B + 18.0,
        ));
        out.push_str(&format!(
            "<line x1=\"{l:.1}\" y1=\"{py:.1}\" x2=\"{l2:.1}\" y2=\"{py:.1}\" stroke=\"black\"/>\n\
             <text x=\"{tx:.1}\" y=\"{py2:.1}\" text-anchor=\"end\">{}</text>\n",
            fmt_tick(fy),
            l = MARGIN_L,
            l2 = MARGIN_L - 5.0,
            tx = MARGIN_L - 8.0,
            py2 = py + 4.0,
        ));
    }
    // Axis labels.
    out.push_str(&format!(
        "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0,
        xml_escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{:.0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.0})\">{}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        xml_escape(y_label)
    ));
    out.push_str(body);
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn legend(series: &[Series]) -> String {
    let mut out = String::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = MARGIN_T + 14.0 + 18.0 * i as f64;
        out.push_str(&format!(
            "<line x1=\"{x0:.1}\" y1=\"{y:.1}\" x2=\"{x1:.1}\" y2=\"{y:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{tx:.1}\" y=\"{ty:.1}\">{}</text>\n",
            xml_escape(&s.label),
            x0 = WIDTH - MARGIN_R + 10.0,
            x1 = WIDTH - MARGIN_R + 34.0,
            tx = WIDTH - MARGIN_R + 40.0,
            ty = y + 4.0,
        ));
    }
    out
}

/// Line chart with optional per-point error bars and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let frame = Frame::from_series(series);
    let mut body = String::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = s
            .xs
            .iter()
            .zip(&s.ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{},{}", fmt_coord(frame.px(x)), fmt_coord(frame.py(y))))
            .collect();
        if points.len() > 1 {
            body.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
                points.join(" ")
            ));
        }
        for (k, (&x, &y)) in s.xs.iter().zip(&s.ys).enumerate() {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            let (px, py) = (frame.px(x), frame.py(y));
            body.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                fmt_coord(px),
                fmt_coord(py)
            ));
            if let Some(err) = &s.err {
                let e = err[k];
                if e > 0.0 && e.is_finite() {
                    let (top, bot) = (frame.py(y + e), frame.py(y - e));
                    body.push_str(&format!(
                        "<line x1=\"{px:.2}\" y1=\"{top:.2}\" x2=\"{px:.2}\" y2=\"{bot:.2}\" stroke=\"{color}\"/>\n\
                         <line x1=\"{xl:.2}\" y1=\"{top:.2}\" x2=\"{xr:.2}\" y2=\"{top:.2}\" stroke=\"{color}\"/>\n\
                         <line x1=\"{xl:.2}\" y1=\"{bot:.2}\" x2=\"{xr:.2}\" y2=\"{bot:.2}\" stroke=\"{color}\"/>\n",
                        xl = px - 4.0,
                        xr = px + 4.0,
                    ));
                }
            }
        }
    }
    body.push_str(&legend(series));
    chart_shell(title, x_label, y_label, &frame, &body)
}

/// Scatter chart; each series becomes one colored point cloud.
pub fn scatter_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let frame = Frame::from_series(series);
    let mut body = String::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for (&x, &y) in s.xs.iter().zip(&s.ys) {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            body.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"{color}\" fill-opacity=\"0.7\"/>\n",
                fmt_coord(frame.px(x)),
                fmt_coord(frame.py(y))
            ));
        }
    }
    body.push_str(&legend(series));
    chart_shell(title, x_label, y_label, &frame, &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_chart_contains_series_and_error_bars() {
        let s = Series {
            label: "both".into(),
            xs: vec![2.0, 3.0, 5.0],
            ys: vec![0.5, 0.4, 0.35],
            err: Some(vec![0.05, 0.04, 0.02]),
        };
        let svg = line_chart("rmse vs S/T", "S/T", "RMSE", &[s]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("both"));
        assert!(svg.matches("<circle").count() == 3);
    }

    #[test]
    fn degenerate_single_point_chart_is_well_formed() {
        let s = Series {
            label: "one".into(),
            xs: vec![2.0],
            ys: vec![0.7],
            err: None,
        };
        let svg = line_chart("t", "x", "y", &[s]);
        assert!(svg.contains("</svg>"));
        assert!(!svg.contains("NaN"));
        assert!(!svg.contains("polyline"), "no line through a single point");
    }

    #[test]
    fn charts_are_deterministic() {
        let s = Series {
            label: "a".into(),
            xs: vec![0.0, 1.0],
            ys: vec![1.0, 2.0],
            err: None,
        };
        assert_eq!(
            scatter_chart("t", "x", "y", &[s.clone()]),
            scatter_chart("t", "x", "y", &[s])
        );
    }
}
