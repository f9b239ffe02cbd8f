//! Benchmark harness: runs the pipeline modes over a parameter grid, writes
//! results as versioned CSV, and renders standalone SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};

use crate::error::{Error, Result};
use crate::matrix::VectorMatrix;
use crate::pipeline::{run_pipeline, Mode, PipelineConfig, PipelineReport};

pub const CSV_VERSION_LINE: &str = "# pqii-bench v1";
pub const CSV_COLUMNS: [&str; 12] = [
    "case_label",
    "n_rows",
    "n_dims",
    "m",
    "ks",
    "chunks",
    "threads",
    "nlist",
    "rmse",
    "wall_seconds",
    "phase",
    "timestamp_iso8601",
];

pub const SUBSPACE_SWEEP: [usize; 4] = [2, 4, 8, 16];
pub const CODESIZE_SWEEP: [usize; 3] = [16, 64, 256];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub case_label: Mode,
    pub n_rows: usize,
    pub n_dims: usize,
    pub m: usize,
    pub ks: usize,
    pub chunks: usize,
    pub threads: usize,
    /// Coarse list count; 0 when the case builds no index.
    pub nlist: usize,
    pub rmse: f64,
    pub wall_seconds: f64,
    pub phase: String,
    pub timestamp: String,
}

impl BenchRow {
    pub fn from_report(report: &PipelineReport, rmse: f64, wall_seconds: f64) -> Self {
        let c = &report.config;
        let (chunks, threads) = match c.mode {
            Mode::Single => (1, 1),
            _ => (c.n_chunks, c.n_threads),
        };
        Self {
            case_label: c.mode,
            n_rows: report.n_rows,
            n_dims: report.n_dims,
            m: c.m_subspaces,
            ks: c.ks,
            chunks,
            threads,
            nlist: report.index.as_ref().map_or(0, |i| i.nlist()),
            rmse,
            wall_seconds,
            phase: "total".into(),
            timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        }
    }

    fn fields(&self) -> [String; 12] {
        [
            self.case_label.to_string(),
            self.n_rows.to_string(),
            self.n_dims.to_string(),
            self.m.to_string(),
            self.ks.to_string(),
            self.chunks.to_string(),
            self.threads.to_string(),
            self.nlist.to_string(),
            self.rmse.to_string(),
            format!("{:.3}", self.wall_seconds),
            self.phase.clone(),
            self.timestamp.clone(),
        ]
    }
}

/// Which parameter the bench varies for Fig.-style trade-off curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Subspace,
    CodeSize,
}

impl std::str::FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subspace" => Ok(Sweep::Subspace),
            "codesize" => Ok(Sweep::CodeSize),
            other => Err(Error::InvalidParameter(format!(
                "unknown sweep {other:?} (expected subspace or codesize)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchGrid {
    pub modes: Vec<Mode>,
    pub m_values: Vec<usize>,
    pub ks_values: Vec<usize>,
    pub chunk_values: Vec<usize>,
    pub thread_values: Vec<usize>,
    pub nlist: Option<usize>,
    pub kmeans_iters: usize,
    pub seed: u64,
    /// Each point runs with seeds `seed..seed + repeats`; the median is reported.
    pub repeats: usize,
}

impl BenchGrid {
    pub fn apply_sweep(&mut self, sweep: Sweep) {
        match sweep {
            Sweep::Subspace => self.m_values = SUBSPACE_SWEEP.to_vec(),
            Sweep::CodeSize => self.ks_values = CODESIZE_SWEEP.to_vec(),
        }
    }

    fn configs(&self) -> Vec<PipelineConfig> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &m in &self.m_values {
                for &ks in &self.ks_values {
                    let (chunks, threads): (&[usize], &[usize]) = match mode {
                        Mode::Single => (&[1], &[1]),
                        _ => (&self.chunk_values, &self.thread_values),
                    };
                    for &c in chunks {
                        for &t in threads {
                            let mut cfg = PipelineConfig::new(mode, m, ks);
                            cfg.n_chunks = c;
                            cfg.n_threads = t;
                            cfg.nlist = self.nlist;
                            cfg.kmeans_iters = self.kmeans_iters;
                            out.push(cfg);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Runs every grid point and returns one `phase=total` row per point.
/// `progress` is called after each point.
pub fn run_bench(
    data: &VectorMatrix,
    grid: &BenchGrid,
    mut progress: impl FnMut(&BenchRow),
) -> Result<Vec<BenchRow>> {
    if grid.repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be >= 1".into()));
    }
    let mut rows = Vec::new();
    for base in grid.configs() {
        let mut rmses = Vec::with_capacity(grid.repeats);
        let mut walls = Vec::with_capacity(grid.repeats);
        let mut last = None;
        for r in 0..grid.repeats {
            let mut cfg = base.clone();
            cfg.seed = grid.seed.wrapping_add(r as u64);
            let report = run_pipeline(data, &cfg)?;
            rmses.push(report.global_rmse);
            walls.push(report.total_seconds());
            last = Some(report);
        }
        let report = last.expect("repeats >= 1");
        let row = BenchRow::from_report(&report, median(&mut rmses), median(&mut walls));
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn to_csv(rows: &[BenchRow], with_header: bool) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    if with_header {
        w.write_record(CSV_COLUMNS).expect("in-memory write");
    }
    for row in rows {
        w.write_record(row.fields()).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8");
    if with_header {
        format!("{CSV_VERSION_LINE}\n{body}")
    } else {
        body
    }
}

/// Writes rows to `path`, appending when the file already holds data.
pub fn append_csv(path: impl AsRef<Path>, rows: &[BenchRow]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.write_all(to_csv(rows, fresh).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str) -> Result<Vec<BenchRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    if let Some(first) = text.lines().next() {
        if first.starts_with('#') && first.trim() != CSV_VERSION_LINE {
            return Err(Error::BenchCsv {
                line: 1,
                message: format!("unsupported schema {:?}", first.trim()),
            });
        }
    }
    let headers = reader.headers().map_err(|e| Error::BenchCsv {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != CSV_COLUMNS {
        return Err(Error::BenchCsv {
            line: headers.position().map_or(1, |p| p.line()),
            message: "header does not match the pqii-bench v1 columns".into(),
        });
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::BenchCsv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |col: &str| Error::BenchCsv {
            line,
            message: format!("invalid {col} value"),
        };
        let num = |i: usize| record[i].trim().parse::<usize>().map_err(|_| bad(CSV_COLUMNS[i]));
        let real = |i: usize| {
            record[i]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| bad(CSV_COLUMNS[i]))
        };
        rows.push(BenchRow {
            case_label: record[0].parse().map_err(|_| bad("case_label"))?,
            n_rows: num(1)?,
            n_dims: num(2)?,
            m: num(3)?,
            ks: num(4)?,
            chunks: num(5)?,
            threads: num(6)?,
            nlist: num(7)?,
            rmse: real(8)?,
            wall_seconds: real(9)?,
            phase: record[10].to_string(),
            timestamp: record[11].to_string(),
        });
    }
    if rows.is_empty() {
        return Err(Error::NoDataRows);
    }
    Ok(rows)
}

/// Reads a bench CSV and writes the charts into `out_dir`. Returns the
/// paths written.
pub fn write_report(csv_path: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let csv_path = csv_path.as_ref();
    let out_dir = out_dir.as_ref();
    let text = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let rows = parse_csv(&text)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, svg) in render_charts(&rows) {
        let path = out_dir.join(name);
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Renders the RMSE-vs-M, RMSE-vs-Ks and wall-time-by-case charts.
pub fn render_charts(rows: &[BenchRow]) -> Vec<(&'static str, String)> {
    let totals: Vec<&BenchRow> = rows.iter().filter(|r| r.phase == "total").collect();
    vec![
        (
            "rmse_vs_m.svg",
            line_chart(
                "Reconstruction RMSE vs subspaces",
                "subspaces (M)",
                "RMSE",
                &series_by_case(&totals, |r| r.m as f64, |r| r.rmse),
                false,
            ),
        ),
        (
            "rmse_vs_ks.svg",
            line_chart(
                "Reconstruction RMSE vs code size",
                "code size (Ks)",
                "RMSE",
                &series_by_case(&totals, |r| r.ks as f64, |r| r.rmse),
                true,
            ),
        ),
        (
            "wall_vs_mode.svg",
            bar_chart(
                "Wall time by case",
                "seconds",
                &mean_by_case(&totals, |r| r.wall_seconds),
            ),
        ),
    ]
}

type Series = (String, Vec<(f64, f64)>);

/// One series per case label; points sharing an x are averaged.
fn series_by_case(
    rows: &[&BenchRow],
    x: impl Fn(&BenchRow) -> f64,
    y: impl Fn(&BenchRow) -> f64,
) -> Vec<Series> {
    let mut groups: BTreeMap<usize, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        let case = Mode::ALL.iter().position(|m| *m == r.case_label).unwrap();
        let slot = groups
            .entry(case)
            .or_default()
            .entry(x(r).to_bits())
            .or_insert((0.0, 0));
        slot.0 += y(r);
        slot.1 += 1;
    }
    groups
        .into_iter()
        .map(|(case, pts)| {
            let mut pts: Vec<(f64, f64)> = pts
                .into_iter()
                .map(|(xb, (sum, n))| (f64::from_bits(xb), sum / n as f64))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (Mode::ALL[case].to_string(), pts)
        })
        .collect()
}

fn mean_by_case(rows: &[&BenchRow], y: impl Fn(&BenchRow) -> f64) -> Vec<(String, f64)> {
    Mode::ALL
        .iter()
        .filter_map(|mode| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.case_label == *mode)
                .map(|r| y(r))
                .collect();
            (!vals.is_empty()).then(|| (mode.to_string(), vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect()
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

/// Standalone SVG line chart; one `<polyline>` per series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> String {
    let tx = |x: f64| if log_x { x.max(f64::MIN_POSITIVE).log2() } else { x };
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x_lo = x_lo.min(tx(x));
        x_hi = x_hi.max(tx(x));
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if !x_lo.is_finite() {
        (x_lo, x_hi, y_hi) = (0.0, 1.0, 1.0);
    }
    let (x_lo, x_hi) = padded_range(x_lo, x_hi);
    let (y_lo, y_hi) = (y_lo, if y_hi <= y_lo { y_lo + 1.0 } else { y_hi * 1.05 });
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (tx(x) - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut out = String::new();
    svg_open(&mut out, title);
    let _ = writeln!(
        out,
        r#"<g stroke="black" fill="none"><line x1="{LEFT}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{b}"/></g>"#,
        b = TOP + plot_h,
        r = LEFT + plot_w
    );
    for i in 0..=4 {
        let y = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r##"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text><line x1="{LEFT}" y1="{py:.1}" x2="{}" y2="{py:.1}" stroke="#ddd"/>"##,
            LEFT - 6.0,
            py(y) + 4.0,
            y,
            LEFT + plot_w,
            py = py(y)
        );
    }
    let mut ticks: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            px(x),
            TOP + plot_h + 16.0,
            x
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(y_label)
    );
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        for &(x, y) in points {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                px(x),
                py(y)
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 15.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Standalone SVG bar chart, one bar per label.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let y_hi = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1e-3) * 1.1;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let slot = plot_w / bars.len().max(1) as f64;
    let mut out = String::new();
    svg_open(&mut out, title);
    let _ = writeln!(
        out,
        r#"<g stroke="black" fill="none"><line x1="{LEFT}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{b}"/></g>"#,
        b = TOP + plot_h,
        r = LEFT + plot_w
    );
    for i in 0..=4 {
        let y = y_hi * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            LEFT - 6.0,
            TOP + plot_h - y / y_hi * plot_h + 4.0,
            y
        );
    }
    for (i, (name, v)) in bars.iter().enumerate() {
        let h = v / y_hi * plot_h;
        let x = LEFT + slot * i as f64 + slot * 0.2;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
            TOP + plot_h - h,
            slot * 0.6,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text><text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.3}</text>"#,
            x + slot * 0.3,
            TOP + plot_h + 16.0,
            escape(name),
            x + slot * 0.3,
            TOP + plot_h - h - 5.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(y_label)
    );
    out.push_str("</svg>\n");
    out
}
