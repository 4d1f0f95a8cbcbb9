//! Self-contained SVG 1.1 emission: scatter plots and line charts, no
//! plotting dependency. Output is deterministic for identical inputs.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;

const LABEL_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_bounds(mut x_min: f64, mut x_max: f64, mut y_min: f64, mut y_max: f64) -> Frame {
        if x_min == x_max {
            x_min -= 0.5;
            x_max += 0.5;
        }
        if y_min == y_max {
            y_min -= 0.5;
            y_max += 0.5;
        }
        let pad_x = 0.05 * (x_max - x_min);
        let pad_y = 0.05 * (y_max - y_min);
        Frame { x_min: x_min - pad_x, x_max: x_max + pad_x, y_min: y_min - pad_y, y_max: y_max + pad_y }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - 2.0 * MARGIN)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" font-family=\"monospace\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    )
}

fn axes(frame: &Frame, out: &mut String) {
    let (x0, x1) = (MARGIN, WIDTH - MARGIN);
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    out.push_str(&format!(
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>\n"
    ));
    for i in 0..=4 {
        let fx = frame.x_min + (frame.x_max - frame.x_min) * i as f64 / 4.0;
        let px = frame.sx(fx);
        out.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{y0:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
             <text x=\"{px:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">{fx:.3}</text>\n",
            y0 + 5.0,
            y0 + 18.0
        ));
        let fy = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
        let py = frame.sy(fy);
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{x0:.1}\" y2=\"{py:.1}\" stroke=\"black\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">{fy:.3}</text>\n",
            x0 - 5.0,
            x0 - 8.0,
            py + 3.0
        ));
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter plot of labeled 2-D points.
pub fn scatter_svg(points: &[([f64; 2], usize)], title: &str) -> String {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for ([x, y], _) in points {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if points.is_empty() {
        (x_min, x_max, y_min, y_max) = (-1.0, 1.0, -1.0, 1.0);
    }
    let frame = Frame::from_bounds(x_min, x_max, y_min, y_max);
    let mut out = header(title);
    axes(&frame, &mut out);
    for ([x, y], label) in points {
        let color = LABEL_COLORS[label % LABEL_COLORS.len()];
        out.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{color}\" fill-opacity=\"0.7\"/>\n",
            frame.sx(*x),
            frame.sy(*y)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Line chart of (x, y) pairs, drawn in input order.
pub fn line_chart_svg(series: &[(f64, f64)], title: &str) -> String {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (x, y) in series {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if series.is_empty() {
        (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
    }
    let frame = Frame::from_bounds(x_min, x_max, y_min, y_max);
    let mut out = header(title);
    axes(&frame, &mut out);
    if !series.is_empty() {
        let path: Vec<String> = series
            .iter()
            .enumerate()
            .map(|(i, (x, y))| {
                format!(
                    "{}{:.2},{:.2}",
                    if i == 0 { "M" } else { "L" },
                    frame.sx(*x),
                    frame.sy(*y)
                )
            })
            .collect();
        out.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_contains_all_points_and_escapes_title() {
        let svg = scatter_svg(&[([0.0, 0.0], 0), ([1.0, 2.0], 1)], "a<b");
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn line_chart_has_one_path() {
        let series: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, (i * i) as f64)).collect();
        let svg = line_chart_svg(&series, "loss");
        assert_eq!(svg.matches("<path").count(), 1);
    }

    #[test]
    fn output_is_deterministic() {
        let pts = [([0.123456, -4.2], 0), ([2.5, 3.25], 2)];
        assert_eq!(scatter_svg(&pts, "t"), scatter_svg(&pts, "t"));
    }

    #[test]
    fn degenerate_inputs_do_not_panic() {
        let _ = scatter_svg(&[], "empty");
        let _ = scatter_svg(&[([1.0, 1.0], 0)], "single");
        let _ = line_chart_svg(&[], "empty");
    }
}
