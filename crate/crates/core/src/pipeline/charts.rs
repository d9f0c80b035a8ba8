//! SVG views of a bundle's CSV tables.
//!
//! Charts only read the tables. Every plotted value is copied verbatim from a
//! CSV cell into a `data-*` attribute of its element, and quartiles use the
//! nearest-rank rule so they are table values too.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::tables::{AP_CSV, COMPRESSION_CSV, NETWORK_CSV};

pub const CHART_FILES: [&str; 4] = ["sizes.svg", "ap.svg", "delay.svg", "rate_ap.svg"];

#[derive(Debug, Error)]
pub enum ChartError {
    #[error("missing table {0}")]
    MissingTable(String),
    #[error("table {table}: {message}")]
    BadTable { table: String, message: String },
    #[error("cannot write chart: {0}")]
    Io(#[from] std::io::Error),
}

/// A table as header plus string rows, with typed accessors.
struct Csv {
    name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn load(dir: &Path, name: &str) -> Result<Csv, ChartError> {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(ChartError::MissingTable(name.to_string()));
        }
        let bad = |e: csv::Error| ChartError::BadTable {
            table: name.to_string(),
            message: e.to_string(),
        };
        let mut r = csv::Reader::from_path(&path).map_err(bad)?;
        let header = r
            .headers()
            .map_err(bad)?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .map_err(bad)?;
        Ok(Csv {
            name: name.to_string(),
            header,
            rows,
        })
    }

    fn col(&self, column: &str) -> Result<usize, ChartError> {
        self.header
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| ChartError::BadTable {
                table: self.name.clone(),
                message: format!("no column {column:?}"),
            })
    }

    /// `(text, value)` cells of a numeric column, in row order.
    fn numbers(&self, column: &str) -> Result<Vec<(String, f64)>, ChartError> {
        let i = self.col(column)?;
        self.rows
            .iter()
            .map(|r| {
                let t = r[i].clone();
                let v = t.parse::<f64>().map_err(|_| ChartError::BadTable {
                    table: self.name.clone(),
                    message: format!("column {column:?} holds non-numeric {t:?}"),
                })?;
                Ok((t, v))
            })
            .collect()
    }

    fn strings(&self, column: &str) -> Result<Vec<String>, ChartError> {
        let i = self.col(column)?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }
}

const W: f64 = 720.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

struct Svg(String);

impl Svg {
    fn new(title: &str, chart: &str) -> Svg {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" data-chart="{chart}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            esc(title)
        );
        Svg(s)
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.0,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, body: &str) {
        let _ = writeln!(
            self.0,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{}</text>"#,
            esc(body)
        );
    }

    fn axes(&mut self, y_label: &str, x_label: &str) {
        self.line(LEFT, TOP, LEFT, H - BOTTOM, "black");
        self.line(LEFT, H - BOTTOM, W - RIGHT, H - BOTTOM, "black");
        let _ = writeln!(
            self.0,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (TOP + H - BOTTOM) / 2.0,
            (TOP + H - BOTTOM) / 2.0,
            esc(y_label)
        );
        self.text((LEFT + W - RIGHT) / 2.0, H - 12.0, "middle", x_label);
    }

    fn y_ticks(&mut self, scale: &Scale, ticks: &[f64]) {
        for &t in ticks {
            let y = scale.map(t);
            self.line(LEFT - 4.0, y, LEFT, y, "black");
            self.text(LEFT - 6.0, y + 4.0, "end", &tick_label(t));
        }
    }

    fn finish(mut self) -> String {
        self.0.push_str("</svg>\n");
        self.0
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v >= 1e6 {
        format!("{}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{}k", v / 1e3)
    } else {
        format!("{v}")
    }
}

/// Maps data values onto a pixel range, linearly or in log10.
struct Scale {
    lo: f64,
    hi: f64,
    p0: f64,
    p1: f64,
    log: bool,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        let f = |x: f64| {
            if self.log {
                x.max(f64::MIN_POSITIVE).log10()
            } else {
                x
            }
        };
        let (a, b) = (f(self.lo), f(self.hi));
        let t = if b > a { (f(v) - a) / (b - a) } else { 0.5 };
        self.p0 + t * (self.p1 - self.p0)
    }
}

/// Decade bounds and ticks covering `values`.
fn log_range(values: impl Iterator<Item = f64>) -> (f64, f64, Vec<f64>) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| *v > 0.0) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (1.0, 10.0, vec![1.0, 10.0]);
    }
    let (a, b) = (
        lo.log10().floor() as i32,
        (hi.log10().ceil() as i32).max(lo.log10().floor() as i32 + 1),
    );
    let ticks = (a..=b).map(|e| 10f64.powi(e)).collect();
    (10f64.powi(a), 10f64.powi(b), ticks)
}

fn linear_ticks(hi: f64) -> (f64, Vec<f64>) {
    if hi <= 0.0 {
        return (1.0, vec![0.0, 0.5, 1.0]);
    }
    let step = 10f64.powf((hi / 5.0).log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * step)
        .find(|s| hi / s <= 6.0)
        .unwrap_or(step * 10.0);
    let top = (hi / step).ceil() * step;
    let n = (top / step).round() as usize;
    (top, (0..=n).map(|k| k as f64 * step).collect())
}

fn nearest_rank(sorted: &[(String, f64)], p: f64) -> &(String, f64) {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    &sorted[rank.clamp(1, sorted.len()) - 1]
}

fn slot(i: usize, n: usize) -> (f64, f64) {
    let width = (W - LEFT - RIGHT) / n.max(1) as f64;
    (LEFT + width * (i as f64 + 0.5), width)
}

fn sizes_chart(compression: &Csv) -> Result<String, ChartError> {
    let codecs = compression.strings("codec")?;
    let sizes = compression.numbers("compressed_bytes")?;
    let mut groups: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    let mut index = BTreeMap::new();
    for (c, s) in codecs.into_iter().zip(sizes) {
        let i = *index.entry(c.clone()).or_insert_with(|| {
            groups.push((c, Vec::new()));
            groups.len() - 1
        });
        groups[i].1.push(s);
    }
    let (lo, hi, ticks) = log_range(groups.iter().flat_map(|g| g.1.iter().map(|s| s.1)));
    let y = Scale {
        lo,
        hi,
        p0: H - BOTTOM,
        p1: TOP,
        log: true,
    };
    let mut svg = Svg::new("Compressed frame size per configuration", "sizes");
    svg.axes("compressed bytes (log)", "configuration");
    svg.y_ticks(&y, &ticks);
    for (i, (codec, values)) in groups.iter_mut().enumerate() {
        values.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (cx, width) = slot(i, index.len());
        let five = [0.0, 25.0, 50.0, 75.0, 100.0].map(|p| {
            if p == 0.0 {
                &values[0]
            } else {
                nearest_rank(values, p)
            }
        });
        let half = 0.3 * width;
        let _ = writeln!(
            svg.0,
            r#"<g data-codec="{}" data-min="{}" data-q1="{}" data-median="{}" data-q3="{}" data-max="{}">"#,
            esc(codec),
            five[0].0,
            five[1].0,
            five[2].0,
            five[3].0,
            five[4].0
        );
        svg.line(cx, y.map(five[0].1), cx, y.map(five[1].1), "black");
        svg.line(cx, y.map(five[3].1), cx, y.map(five[4].1), "black");
        let (top, bottom) = (y.map(five[3].1), y.map(five[1].1));
        let _ = writeln!(
            svg.0,
            r#"<rect x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="steelblue" fill-opacity="0.5" stroke="black"/>"#,
            cx - half,
            2.0 * half,
            (bottom - top).max(0.5)
        );
        svg.line(
            cx - half,
            y.map(five[2].1),
            cx + half,
            y.map(five[2].1),
            "black",
        );
        svg.0.push_str("</g>\n");
        svg.text(cx, H - BOTTOM + 16.0, "middle", codec);
    }
    Ok(svg.finish())
}

fn ap_chart(ap: &Csv) -> Result<String, ChartError> {
    let codecs = ap.strings("codec")?;
    let car = ap.numbers("car_ap")?;
    let ped = ap.numbers("pedestrian_ap")?;
    let y = Scale {
        lo: 0.0,
        hi: 1.0,
        p0: H - BOTTOM,
        p1: TOP,
        log: false,
    };
    let mut svg = Svg::new("Average precision per configuration", "ap");
    svg.axes("AP (mean over frames)", "configuration");
    svg.y_ticks(&y, &[0.0, 0.25, 0.5, 0.75, 1.0]);
    for (i, codec) in codecs.iter().enumerate() {
        let (cx, width) = slot(i, codecs.len());
        let bar = 0.35 * width;
        for (k, (class, series, fill)) in [
            ("car", &car, "steelblue"),
            ("pedestrian", &ped, "darkorange"),
        ]
        .into_iter()
        .enumerate()
        {
            let (text, v) = &series[i];
            let x = cx - bar + k as f64 * bar;
            let top = y.map(v.clamp(0.0, 1.0));
            let _ = writeln!(
                svg.0,
                r#"<rect data-codec="{}" data-class="{class}" data-ap="{text}" x="{x:.2}" y="{top:.2}" width="{bar:.2}" height="{:.2}" fill="{fill}"/>"#,
                esc(codec),
                H - BOTTOM - top
            );
        }
        svg.text(cx, H - BOTTOM + 16.0, "middle", codec);
    }
    svg.text(
        W - RIGHT - 4.0,
        TOP - 4.0,
        "end",
        "blue: car, orange: pedestrian",
    );
    Ok(svg.finish())
}

fn delay_chart(network: &Csv) -> Result<String, ChartError> {
    let codecs = network.strings("codec")?;
    let delay = network.numbers("network_ms_mean")?;
    let (top_v, ticks) = linear_ticks(delay.iter().map(|d| d.1).fold(0.0, f64::max));
    let y = Scale {
        lo: 0.0,
        hi: top_v,
        p0: H - BOTTOM,
        p1: TOP,
        log: false,
    };
    let mut svg = Svg::new("Mean network delay per configuration", "delay");
    svg.axes("queue + transmission delay (ms)", "configuration");
    svg.y_ticks(&y, &ticks);
    for (i, (codec, (text, v))) in codecs.iter().zip(&delay).enumerate() {
        let (cx, width) = slot(i, codecs.len());
        let bar = 0.6 * width;
        let top = y.map(*v);
        let _ = writeln!(
            svg.0,
            r#"<rect data-codec="{}" data-delay-ms="{text}" x="{:.2}" y="{top:.2}" width="{bar:.2}" height="{:.2}" fill="seagreen"/>"#,
            esc(codec),
            cx - bar / 2.0,
            H - BOTTOM - top
        );
        svg.text(cx, H - BOTTOM + 16.0, "middle", codec);
    }
    Ok(svg.finish())
}

fn rate_ap_chart(network: &Csv, ap: &Csv) -> Result<String, ChartError> {
    let rate_codecs = network.strings("codec")?;
    let rates = network.numbers("required_rate_bps")?;
    let ap_codecs = ap.strings("codec")?;
    let car = ap.numbers("car_ap")?;
    let ap_of: BTreeMap<&str, &(String, f64)> =
        ap_codecs.iter().map(String::as_str).zip(&car).collect();
    let (lo, hi, ticks) = log_range(rates.iter().map(|r| r.1));
    let x = Scale {
        lo,
        hi,
        p0: LEFT,
        p1: W - RIGHT,
        log: true,
    };
    let y = Scale {
        lo: 0.0,
        hi: 1.0,
        p0: H - BOTTOM,
        p1: TOP,
        log: false,
    };
    let mut svg = Svg::new("Required uplink rate versus car AP", "rate_ap");
    svg.axes(
        "car AP (mean over frames)",
        "required rate per vehicle (bit/s, log)",
    );
    svg.y_ticks(&y, &[0.0, 0.25, 0.5, 0.75, 1.0]);
    for t in ticks {
        let px = x.map(t);
        svg.line(px, H - BOTTOM, px, H - BOTTOM + 4.0, "black");
        svg.text(px, H - BOTTOM + 28.0, "middle", &tick_label(t));
    }
    for (codec, (rate_text, rate)) in rate_codecs.iter().zip(&rates) {
        let Some((ap_text, apv)) = ap_of.get(codec.as_str()).copied() else {
            return Err(ChartError::BadTable {
                table: AP_CSV.into(),
                message: format!("no row for codec {codec:?}"),
            });
        };
        let fill = if codec.starts_with('p') {
            "steelblue"
        } else {
            "darkorange"
        };
        let (px, py) = (x.map(*rate), y.map(apv.clamp(0.0, 1.0)));
        let _ = writeln!(
            svg.0,
            r#"<circle data-codec="{}" data-rate-bps="{rate_text}" data-car-ap="{ap_text}" cx="{px:.2}" cy="{py:.2}" r="4" fill="{fill}"/>"#,
            esc(codec)
        );
        svg.text(px + 6.0, py - 6.0, "start", codec);
    }
    Ok(svg.finish())
}

/// Renders the four charts of the bundle in `bundle_dir` into `out_dir`.
pub fn render_charts(bundle_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, ChartError> {
    let compression = Csv::load(bundle_dir, COMPRESSION_CSV)?;
    let ap = Csv::load(bundle_dir, AP_CSV)?;
    let network = Csv::load(bundle_dir, NETWORK_CSV)?;
    let svgs = [
        sizes_chart(&compression)?,
        ap_chart(&ap)?,
        delay_chart(&network)?,
        rate_ap_chart(&network, &ap)?,
    ];
    let mut paths = Vec::with_capacity(svgs.len());
    for (name, svg) in CHART_FILES.iter().zip(svgs) {
        let path = out_dir.join(name);
        crate::io::write_atomic(&path, svg.as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks() {
        assert_eq!(
            linear_ticks(37.0),
            (40.0, vec![0.0, 10.0, 20.0, 30.0, 40.0])
        );
        let (lo, hi, t) = log_range([2706.0, 375_000.0].into_iter());
        assert_eq!((lo, hi), (1e3, 1e6));
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn missing_table_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = render_charts(dir.path(), dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "missing table compression.csv");
    }

    #[test]
    fn quartiles_are_table_values() {
        let v: Vec<(String, f64)> = (1..=7).map(|k| (k.to_string(), k as f64)).collect();
        assert_eq!(nearest_rank(&v, 25.0).0, "2");
        assert_eq!(nearest_rank(&v, 50.0).0, "4");
        assert_eq!(nearest_rank(&v, 75.0).0, "6");
    }
}
