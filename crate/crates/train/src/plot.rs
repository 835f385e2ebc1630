//! Minimal deterministic SVG line charts of the per-epoch metrics.

use std::fmt::Write as _;

use crate::metrics::MetricsLog;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const TRAIN_COLOR: &str = "#1f77b4";
const VAL_COLOR: &str = "#ff7f0e";

struct Chart<'a> {
    title: &'a str,
    y_label: &'a str,
    y_min: f64,
    y_max: f64,
    train: Vec<f64>,
    val: Vec<f64>,
}

impl Chart<'_> {
    fn x(&self, i: usize) -> f64 {
        let n = self.train.len();
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        if n <= 1 {
            MARGIN_LEFT + plot_w / 2.0
        } else {
            MARGIN_LEFT + plot_w * i as f64 / (n - 1) as f64
        }
    }

    fn y(&self, v: f64) -> f64 {
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let t = ((v - self.y_min) / (self.y_max - self.y_min)).clamp(0.0, 1.0);
        HEIGHT - MARGIN_BOTTOM - t * plot_h
    }

    fn polyline(&self, values: &[f64], color: &str) -> String {
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", self.x(i), self.y(v)))
            .collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        )
    }

    fn render(&self) -> String {
        let mut s = String::new();
        let bottom = HEIGHT - MARGIN_BOTTOM;
        let right = WIDTH - MARGIN_RIGHT;
        writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
        )
        .unwrap();
        writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>",
            WIDTH / 2.0,
            self.title
        )
        .unwrap();
        writeln!(
            s,
            "<path d=\"M{MARGIN_LEFT},{MARGIN_TOP} V{bottom} H{right}\" fill=\"none\" stroke=\"black\"/>"
        )
        .unwrap();
        for k in 0..=4 {
            let v = self.y_min + (self.y_max - self.y_min) * k as f64 / 4.0;
            let y = self.y(v);
            writeln!(
                s,
                "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{MARGIN_LEFT}\" y2=\"{y:.2}\" stroke=\"black\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.2}</text>",
                MARGIN_LEFT - 5.0,
                MARGIN_LEFT - 8.0,
                y + 4.0
            )
            .unwrap();
        }
        let n = self.train.len();
        let step = n.div_ceil(10).max(1);
        for i in (0..n).step_by(step) {
            let x = self.x(i);
            writeln!(
                s,
                "<line x1=\"{x:.2}\" y1=\"{bottom}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/><text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                bottom + 5.0,
                bottom + 18.0,
                i + 1
            )
            .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">epoch</text>",
            WIDTH / 2.0,
            HEIGHT - 10.0
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            self.y_label
        )
        .unwrap();
        s.push_str(&self.polyline(&self.train, TRAIN_COLOR));
        s.push_str(&self.polyline(&self.val, VAL_COLOR));
        for (k, (label, color)) in [("train", TRAIN_COLOR), ("validation", VAL_COLOR)]
            .iter()
            .enumerate()
        {
            let y = MARGIN_TOP + 10.0 + 18.0 * k as f64;
            let x = right - 110.0;
            writeln!(
                s,
                "<line x1=\"{x:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{:.2}\" y=\"{:.2}\">{label}</text>",
                x + 20.0,
                x + 26.0,
                y + 4.0
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Train and validation accuracy per epoch; the y axis is fixed to [0, 1].
pub fn accuracy_svg(log: &MetricsLog) -> String {
    Chart {
        title: "Accuracy",
        y_label: "accuracy",
        y_min: 0.0,
        y_max: 1.0,
        train: log.rows.iter().map(|r| r.train_acc).collect(),
        val: log.rows.iter().map(|r| r.val_acc).collect(),
    }
    .render()
}

/// Train and validation loss per epoch; the y axis spans [0, max loss].
pub fn loss_svg(log: &MetricsLog) -> String {
    let train: Vec<f64> = log.rows.iter().map(|r| r.train_loss).collect();
    let val: Vec<f64> = log.rows.iter().map(|r| r.val_loss).collect();
    let top = train.iter().chain(&val).copied().fold(0.0, f64::max);
    Chart {
        title: "Loss",
        y_label: "loss",
        y_min: 0.0,
        y_max: if top > 0.0 { top * 1.05 } else { 1.0 },
        train,
        val,
    }
    .render()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EpochMetrics;

    fn log(n: usize) -> MetricsLog {
        MetricsLog {
            rows: (1..=n)
                .map(|e| EpochMetrics {
                    epoch: e,
                    train_loss: 1.0 / e as f64,
                    train_acc: 0.05 * e as f64,
                    val_loss: 1.2 / e as f64,
                    val_acc: 0.04 * e as f64,
                })
                .collect(),
        }
    }

    fn polyline_points(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| {
                let pts = l
                    .split("points=\"")
                    .nth(1)
                    .unwrap()
                    .split('"')
                    .next()
                    .unwrap();
                pts.split(' ')
                    .map(|p| {
                        let (x, y) = p.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn two_series_with_one_point_per_epoch() {
        for svg in [accuracy_svg(&log(15)), loss_svg(&log(15))] {
            let lines = polyline_points(&svg);
            assert_eq!(lines.len(), 2);
            assert!(lines.iter().all(|l| l.len() == 15));
            assert!(svg.contains(">train<") && svg.contains(">validation<"));
        }
    }

    #[test]
    fn deterministic_bytes() {
        assert_eq!(accuracy_svg(&log(7)), accuracy_svg(&log(7)));
        assert_eq!(loss_svg(&log(7)), loss_svg(&log(7)));
    }

    #[test]
    fn accuracy_axis_is_unit_interval() {
        let svg = accuracy_svg(&log(3));
        assert!(svg.contains(">0.00</text>") && svg.contains(">1.00</text>"));
        // value 0 sits on the x axis and 1 at the top of the plot area
        let c = Chart {
            title: "",
            y_label: "",
            y_min: 0.0,
            y_max: 1.0,
            train: vec![],
            val: vec![],
        };
        assert_eq!(c.y(0.0), HEIGHT - MARGIN_BOTTOM);
        assert_eq!(c.y(1.0), MARGIN_TOP);
    }
}
