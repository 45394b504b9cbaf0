//! Deterministic SVG line charts from CSV logs. No timestamps, no
//! randomness: regenerating from the same data is byte-identical.

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 60.0;

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

/// One fixed-size chart; every data point becomes one polyline vertex.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &all {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if all.is_empty() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"28\" font-family=\"sans-serif\" font-size=\"18\" text-anchor=\"middle\">{title}</text>\n",
        WIDTH / 2.0
    ));

    // gridlines and tick labels
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let gx = MARGIN_LEFT + t * plot_w;
        let gy = MARGIN_TOP + t * plot_h;
        let xv = x_min + t * (x_max - x_min);
        let yv = y_max - t * (y_max - y_min);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            fmt(gx),
            fmt(MARGIN_TOP),
            fmt(gx),
            fmt(MARGIN_TOP + plot_h)
        ));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            fmt(MARGIN_LEFT),
            fmt(gy),
            fmt(MARGIN_LEFT + plot_w),
            fmt(gy)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            fmt(gx),
            fmt(MARGIN_TOP + plot_h + 18.0),
            tick_label(xv)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_LEFT - 6.0),
            fmt(gy + 4.0),
            tick_label(yv)
        ));
    }

    // axes
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" stroke-width=\"1.5\"/>\n",
        fmt(MARGIN_LEFT),
        fmt(MARGIN_TOP),
        fmt(MARGIN_LEFT),
        fmt(MARGIN_TOP + plot_h)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" stroke-width=\"1.5\"/>\n",
        fmt(MARGIN_LEFT),
        fmt(MARGIN_TOP + plot_h),
        fmt(MARGIN_LEFT + plot_w),
        fmt(MARGIN_TOP + plot_h)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{x_label}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 14.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{y_label}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .map(|(x, y)| format!("{},{}", fmt(sx(*x)), fmt(sy(*y))))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let ly = MARGIN_TOP + 16.0 + 18.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"3\"/>\n",
            fmt(MARGIN_LEFT + plot_w - 150.0),
            fmt(ly - 4.0),
            fmt(MARGIN_LEFT + plot_w - 126.0),
            fmt(ly - 4.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            fmt(MARGIN_LEFT + plot_w - 120.0),
            fmt(ly),
            s.label
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_has_one_vertex_per_point() {
        let series = vec![Series {
            label: "best".into(),
            points: (0..10).map(|i| (i as f64, (i * i) as f64)).collect(),
        }];
        let a = line_chart("t", "x", "y", &series);
        let b = line_chart("t", "x", "y", &series);
        assert_eq!(a, b);
        let points_attr = a
            .lines()
            .find(|l| l.starts_with("<polyline"))
            .and_then(|l| l.split("points=\"").nth(1))
            .and_then(|l| l.split('"').next())
            .unwrap();
        assert_eq!(points_attr.split(' ').count(), 10);
    }

    #[test]
    fn degenerate_inputs_do_not_panic() {
        let svg = line_chart("t", "x", "y", &[]);
        assert!(svg.contains("</svg>"));
        let one = vec![Series { label: "p".into(), points: vec![(2.0, 3.0)] }];
        assert!(line_chart("t", "x", "y", &one).contains("polyline"));
    }
}
