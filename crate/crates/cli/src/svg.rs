//! Hand-written SVG figures. Output depends only on the input data, so equal
//! inputs give byte-identical files.

use std::fmt::Write;

use raschkit::raschtree::TreeNode;

const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6a4c93", "#00798c"];

fn f(x: f64) -> String {
    format!("{x:.2}")
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Linear map from data range [d0, d1] to pixel range [r0, r1].
#[derive(Clone, Copy)]
struct Scale {
    d0: f64,
    d1: f64,
    r0: f64,
    r1: f64,
}

impl Scale {
    fn new((d0, d1): (f64, f64), r0: f64, r1: f64) -> Self {
        Self { d0, d1, r0, r1 }
    }

    fn at(&self, v: f64) -> f64 {
        self.r0 + (v - self.d0) / (self.d1 - self.d0) * (self.r1 - self.r0)
    }
}

/// Padded range covering `values` and optionally zero, never empty.
fn range(values: impl IntoIterator<Item = f64>, include_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if include_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.06 * (hi - lo);
    (lo - pad, hi + pad)
}

fn ticks((lo, hi): (f64, f64)) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|s| s * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

struct Canvas {
    width: f64,
    height: f64,
    body: String,
}

impl Canvas {
    fn new(width: f64, height: f64, title: &str) -> Self {
        let mut c = Self {
            width,
            height,
            body: String::new(),
        };
        c.text(width / 2.0, 22.0, title, "middle", 15.0);
        c
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}"{extra}/>"#,
            f(x1),
            f(y1),
            f(x2),
            f(y2)
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}" stroke="{stroke}"/>"#,
            f(x),
            f(y),
            f(w.max(0.0)),
            f(h.max(0.0))
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{}" cy="{}" r="{}" fill="{fill}"/>"#,
            f(x),
            f(y),
            f(r)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{},{}", f(*x), f(*y))).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            p.join(" ")
        );
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str, size: f64) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-size="{}">{}</text>"#,
            f(x),
            f(y),
            f(size),
            esc(s)
        );
    }

    fn text_rotated(&mut self, x: f64, y: f64, s: &str, anchor: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-size="11" transform="rotate(-45 {} {})">{}</text>"#,
            f(x),
            f(y),
            f(x),
            f(y),
            esc(s)
        );
    }

    /// Left axis with ticks and horizontal grid lines across [x0, x1].
    fn y_axis(&mut self, y: Scale, x0: f64, x1: f64, label: &str) {
        self.line(x0, y.r0, x0, y.r1, "#333", "");
        for t in ticks((y.d0, y.d1)) {
            let py = y.at(t);
            self.line(x0, py, x1, py, "#e4e4e4", "");
            self.line(x0 - 4.0, py, x0, py, "#333", "");
            self.text(x0 - 7.0, py + 4.0, &tick_label(t), "end", 11.0);
        }
        let mid = (y.r0 + y.r1) / 2.0;
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 {} {})">{}</text>"#,
            f(x0 - 42.0),
            f(mid),
            f(x0 - 42.0),
            f(mid),
            esc(label)
        );
    }

    /// Item labels under equally spaced positions.
    fn item_axis(&mut self, labels: &[String], x: &dyn Fn(usize) -> f64, y: f64) {
        for (j, l) in labels.iter().enumerate() {
            self.line(x(j), y, x(j), y + 4.0, "#333", "");
            self.text_rotated(x(j) + 3.0, y + 16.0, l, "end");
        }
    }

    fn legend(&mut self, names: &[String], x: f64, y: f64) {
        for (k, name) in names.iter().enumerate() {
            let yy = y + 16.0 * k as f64;
            let colour = PALETTE[k % PALETTE.len()];
            self.line(x, yy, x + 18.0, yy, colour, r#" stroke-width="2""#);
            self.text(x + 24.0, yy + 4.0, name, "start", 11.0);
        }
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = f(self.width),
            h = f(self.height),
        )
    }
}

const LEFT: f64 = 70.0;
const TOP: f64 = 40.0;

fn item_positions(m: usize, x0: f64, x1: f64) -> impl Fn(usize) -> f64 {
    let step = (x1 - x0) / m.max(1) as f64;
    move |j| x0 + step * (j as f64 + 0.5)
}

/// Bar chart of per-item proportions.
pub fn item_bars(labels: &[String], values: &[f64], title: &str) -> String {
    let (w, h) = (100.0 + 40.0 * labels.len() as f64, 360.0);
    let mut c = Canvas::new(w, h, title);
    let plot_bottom = h - 90.0;
    let y = Scale::new((0.0, 1.0), plot_bottom, TOP);
    c.y_axis(y, LEFT, w - 20.0, "proportion solved");
    let x = item_positions(labels.len(), LEFT, w - 20.0);
    for (j, &v) in values.iter().enumerate() {
        c.rect(x(j) - 13.0, y.at(v), 26.0, plot_bottom - y.at(v), PALETTE[0], "none");
    }
    c.line(LEFT, plot_bottom, w - 20.0, plot_bottom, "#333", "");
    c.item_axis(labels, &x, plot_bottom);
    c.finish()
}

/// One line with point markers per series over the items.
pub fn profiles(labels: &[String], series: &[(String, Vec<f64>)], title: &str, ylabel: &str) -> String {
    let (w, h) = (200.0 + 40.0 * labels.len() as f64, 380.0);
    let mut c = Canvas::new(w, h, title);
    let plot_bottom = h - 90.0;
    let plot_right = w - 120.0;
    let y = Scale::new(range(series.iter().flat_map(|s| s.1.iter().copied()), true), plot_bottom, TOP);
    c.y_axis(y, LEFT, plot_right, ylabel);
    let x = item_positions(labels.len(), LEFT, plot_right);
    for (k, (_, values)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        // infinite difficulties (boundary items) leave a gap in the line
        let mut run: Vec<(f64, f64)> = Vec::new();
        for (j, &v) in values.iter().chain([&f64::NAN]).enumerate() {
            if v.is_finite() {
                run.push((x(j), y.at(v)));
                continue;
            }
            if run.len() > 1 {
                c.polyline(&run, colour);
            }
            for (px, py) in run.drain(..) {
                c.circle(px, py, 3.5, colour);
            }
        }
    }
    c.line(LEFT, plot_bottom, plot_right, plot_bottom, "#333", "");
    c.item_axis(labels, &x, plot_bottom);
    if series.len() > 1 {
        let names: Vec<String> = series.iter().map(|s| s.0.clone()).collect();
        c.legend(&names, plot_right + 14.0, TOP + 10.0);
    }
    c.finish()
}

/// Person abilities (histogram, top) and item difficulties (markers, bottom)
/// on one shared latent axis.
pub fn person_item(labels: &[String], beta: &[f64], theta: &[f64]) -> String {
    let m = labels.len();
    let (w, h) = (640.0, 210.0 + 18.0 * m as f64);
    let mut c = Canvas::new(w, h, "Person-item map");
    let (x0, x1) = (110.0, w - 30.0);
    let xs = Scale::new(range(beta.iter().chain(theta).copied(), false), x0, x1);
    let hist_bottom = TOP + 120.0;

    let bins = 30;
    let width = (xs.d1 - xs.d0) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &t in theta.iter().filter(|t| t.is_finite()) {
        let b = (((t - xs.d0) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    for (b, &n) in counts.iter().enumerate() {
        let height = 110.0 * n as f64 / max;
        c.rect(xs.at(xs.d0 + width * b as f64), hist_bottom - height, xs.at(xs.d0 + width) - xs.at(xs.d0), height, "#9ecae1", "#ffffff");
    }
    c.text(x0 - 8.0, hist_bottom - 50.0, "persons", "end", 12.0);
    c.line(x0, hist_bottom, x1, hist_bottom, "#333", "");

    let row = |j: usize| hist_bottom + 24.0 + 18.0 * j as f64;
    for (j, (&b, l)) in beta.iter().zip(labels).enumerate() {
        c.line(x0, row(j), x1, row(j), "#eeeeee", "");
        c.circle(xs.at(b), row(j), 4.0, PALETTE[1]);
        c.text(x0 - 8.0, row(j) + 4.0, l, "end", 11.0);
    }
    let axis_y = row(m) + 2.0;
    c.line(x0, axis_y, x1, axis_y, "#333", "");
    for t in ticks((xs.d0, xs.d1)) {
        c.line(xs.at(t), axis_y, xs.at(t), axis_y + 4.0, "#333", "");
        c.text(xs.at(t), axis_y + 17.0, &tick_label(t), "middle", 11.0);
    }
    c.text((x0 + x1) / 2.0, axis_y + 36.0, "latent trait", "middle", 12.0);
    c.finish()
}

/// Item-wise differences with simultaneous intervals; the anchor sits at 0
/// with zero width.
pub fn ci_plot(labels: &[String], diff: &[f64], lower: &[f64], upper: &[f64], anchor: usize, title: &str) -> String {
    let m = labels.len();
    let (w, h) = (600.0, 110.0 + 24.0 * m as f64);
    let mut c = Canvas::new(w, h, title);
    let (x0, x1) = (130.0, w - 30.0);
    let xs = Scale::new(range(lower.iter().chain(upper).copied(), true), x0, x1);
    let row = |j: usize| TOP + 20.0 + 24.0 * j as f64;
    let bottom = row(m);
    c.line(xs.at(0.0), TOP + 5.0, xs.at(0.0), bottom - 10.0, "#888", r#" stroke-dasharray="4 3""#);
    for j in 0..m {
        let colour = if lower[j] > 0.0 || upper[j] < 0.0 { PALETTE[1] } else { PALETTE[0] };
        c.line(xs.at(lower[j]), row(j), xs.at(upper[j]), row(j), colour, r#" stroke-width="2""#);
        c.circle(xs.at(diff[j]), row(j), 4.0, colour);
        let label = if j == anchor { format!("{} (anchor)", labels[j]) } else { labels[j].clone() };
        c.text(x0 - 8.0, row(j) + 4.0, &label, "end", 11.0);
    }
    c.line(x0, bottom, x1, bottom, "#333", "");
    for t in ticks((xs.d0, xs.d1)) {
        c.line(xs.at(t), bottom, xs.at(t), bottom + 4.0, "#333", "");
        c.text(xs.at(t), bottom + 17.0, &tick_label(t), "middle", 11.0);
    }
    c.text((x0 + x1) / 2.0, bottom + 36.0, "difference in item difficulty (reference - focal)", "middle", 12.0);
    c.finish()
}

/// Statistic per split point with an optional horizontal critical value.
pub fn sequence(labels: &[String], stats: &[f64], critical: Option<f64>, title: &str) -> String {
    let n = labels.len();
    let (w, h) = ((140.0 + 26.0 * n as f64).max(420.0), 360.0);
    let mut c = Canvas::new(w, h, title);
    let plot_bottom = h - 80.0;
    let y = Scale::new(range(stats.iter().copied().chain(critical), true), plot_bottom, TOP);
    c.y_axis(y, LEFT, w - 20.0, "LM statistic");
    let x = item_positions(n, LEFT, w - 20.0);
    if let Some(cv) = critical {
        c.line(LEFT, y.at(cv), w - 20.0, y.at(cv), PALETTE[1], r#" stroke-dasharray="6 4""#);
    }
    let pts: Vec<(f64, f64)> = stats.iter().enumerate().map(|(k, &s)| (x(k), y.at(s))).collect();
    c.polyline(&pts, PALETTE[0]);
    for (px, py) in pts {
        c.circle(px, py, 3.0, PALETTE[0]);
    }
    c.line(LEFT, plot_bottom, w - 20.0, plot_bottom, "#333", "");
    for (k, l) in labels.iter().enumerate() {
        c.text(x(k), plot_bottom + 16.0, l, "middle", 10.0);
    }
    c.text((LEFT + w - 20.0) / 2.0, plot_bottom + 38.0, "split point (at or below)", "middle", 12.0);
    c.finish()
}

/// Tree diagram: inner nodes show the split covariate and p-value, leaves
/// show their sum-zero item profile on a common vertical scale.
pub fn tree(root: &TreeNode, leaf_profiles: &[(usize, Vec<f64>)]) -> String {
    let leaves = root.leaves();
    let depth = root.nodes().iter().map(|n| n.depth).max().unwrap_or(1);
    let leaf_w = 170.0;
    let (w, h) = (40.0 + leaf_w * leaves.len() as f64, 120.0 + 90.0 * depth as f64 + 140.0);
    let mut c = Canvas::new(w, h, "Rasch tree");
    let leaf_x: Vec<(usize, f64)> = leaves
        .iter()
        .enumerate()
        .map(|(k, l)| (l.id, 20.0 + leaf_w * (k as f64 + 0.5)))
        .collect();
    let yscale = Scale::new(range(leaf_profiles.iter().flat_map(|p| p.1.iter().copied()), true), 0.0, 1.0);
    let level_y = |d: usize| TOP + 30.0 + 90.0 * (d as f64 - 1.0);
    let leaf_top = level_y(depth) + 40.0;

    fn x_of(node: &TreeNode, leaf_x: &[(usize, f64)]) -> f64 {
        if node.is_leaf() {
            return leaf_x.iter().find(|(id, _)| *id == node.id).map_or(0.0, |p| p.1);
        }
        node.children.iter().map(|ch| x_of(ch, leaf_x)).sum::<f64>() / node.children.len() as f64
    }

    for node in root.nodes() {
        let nx = x_of(node, &leaf_x);
        let ny = if node.is_leaf() { leaf_top } else { level_y(node.depth) };
        if let Some(split) = &node.split {
            let (l, r) = split.describe();
            for (child, edge) in node.children.iter().zip([l, r]) {
                let cx = x_of(child, &leaf_x);
                let cy = if child.is_leaf() { leaf_top } else { level_y(child.depth) - 16.0 };
                c.line(nx, ny + 16.0, cx, cy, "#555", "");
                c.text((nx + cx) / 2.0, (ny + 16.0 + cy) / 2.0, &edge, "middle", 10.0);
            }
            let p = node
                .tests
                .iter()
                .find(|t| t.result.covariate == split.covariate)
                .map(|t| format!("p = {:.4}", t.adjusted_p))
                .unwrap_or_default();
            let _ = writeln!(
                c.body,
                r##"<ellipse cx="{}" cy="{}" rx="62" ry="22" fill="#f4f4f4" stroke="#555"/>"##,
                f(nx),
                f(ny)
            );
            c.text(nx, ny - 3.0, &format!("{} {}", node.id, split.covariate), "middle", 12.0);
            c.text(nx, ny + 12.0, &p, "middle", 10.0);
        } else {
            let (bw, bh) = (leaf_w - 20.0, 110.0);
            let bx = nx - bw / 2.0;
            c.rect(bx, leaf_top, bw, bh, "#ffffff", "#555");
            c.text(nx, leaf_top + 14.0, &format!("Node {} (n = {})", node.id, node.n()), "middle", 11.0);
            let zero = leaf_top + 24.0 + 80.0 * (1.0 - yscale.at(0.0));
            c.line(bx + 6.0, zero, bx + bw - 6.0, zero, "#dddddd", "");
            if let Some((_, beta)) = leaf_profiles.iter().find(|p| p.0 == node.id) {
                let x = item_positions(beta.len(), bx + 6.0, bx + bw - 6.0);
                let pts: Vec<(f64, f64)> = beta
                    .iter()
                    .enumerate()
                    .map(|(j, &b)| (x(j), leaf_top + 24.0 + 80.0 * (1.0 - yscale.at(b))))
                    .collect();
                c.polyline(&pts, PALETTE[0]);
                for (px, py) in pts {
                    c.circle(px, py, 2.2, PALETTE[0]);
                }
            }
        }
    }
    c.finish()
}
