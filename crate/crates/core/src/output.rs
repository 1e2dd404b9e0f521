//! CSV tables and SVG line charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::{median, MpStudy, RunRecord, RunRow, SpectraRun, SweepResult};
use crate::spectral::Time;

pub const RUN_HEADER: [&str; 7] = [
    "time",
    "train_error",
    "test_error",
    "param_norm",
    "bound_rough",
    "bound_finer",
    "config_hash",
];

/// `{:.16e}` keeps 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("not a number: {s:?}")))
}

/// One parsed line of a run CSV.
#[derive(Debug, Clone, Copy)]
pub struct CsvRow {
    pub time: Time,
    pub train_error: f64,
    pub test_error: f64,
    pub param_norm: f64,
    pub bound_rough: f64,
    pub bound_finer: f64,
}

impl CsvRow {
    pub fn from_run(r: &RunRow) -> Self {
        CsvRow {
            time: r.time,
            train_error: r.train_error,
            test_error: r.test_error,
            param_norm: r.param_norm,
            bound_rough: r.bound_rough,
            bound_finer: r.bound_finer,
        }
    }

    fn values(&self) -> [f64; 5] {
        [
            self.train_error,
            self.test_error,
            self.param_norm,
            self.bound_rough,
            self.bound_finer,
        ]
    }

    /// Bitwise equality, so NaN entries compare equal to themselves.
    pub fn bit_eq(&self, other: &CsvRow) -> bool {
        self.time.value().to_bits() == other.time.value().to_bits()
            && self
                .values()
                .iter()
                .zip(other.values())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn time_cell(t: Time) -> String {
    match t {
        Time::Finite(v) => fmt_f64(v),
        Time::Infinity => "inf".into(),
    }
}

/// Run CSV as a string: header plus one line per row.
pub fn run_csv(rows: &[RunRow], config_hash: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RUN_HEADER)?;
    for r in rows {
        let c = CsvRow::from_run(r);
        let mut rec = vec![time_cell(c.time)];
        rec.extend(c.values().iter().map(|&v| fmt_f64(v)));
        rec.push(config_hash.to_string());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

pub fn emit_csv(record: &RunRecord, path: &Path) -> Result<()> {
    fs::write(path, run_csv(&record.rows, &record.config_hash)?)?;
    Ok(())
}

/// Parses a run CSV back into rows and the config hash (empty for a
/// header-only file).
pub fn read_run_csv(text: &str) -> Result<(Vec<CsvRow>, String)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RUN_HEADER {
        return Err(Error::invalid(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    let mut hash = String::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| parse_f64(&rec[i]);
        let t = f(0)?;
        rows.push(CsvRow {
            time: if t == f64::INFINITY { Time::Infinity } else { Time::Finite(t) },
            train_error: f(1)?,
            test_error: f(2)?,
            param_norm: f(3)?,
            bound_rough: f(4)?,
            bound_finer: f(5)?,
        });
        if hash.is_empty() {
            hash = rec[6].to_string();
        } else if hash != rec[6] {
            return Err(Error::invalid("rows carry different config hashes"));
        }
    }
    Ok((rows, hash))
}

/// A generic numeric table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ascii"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_log: bool,
    pub y_log: bool,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 220.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        Axis { log, lo, hi }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    /// Decade ticks on log axes, five even ticks otherwise.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let step = ((self.hi - self.lo) / 12.0).ceil().max(1.0) as i64;
            (self.lo as i64..=self.hi as i64)
                .filter(|e| (e - self.lo as i64) % step == 0)
                .map(|e| (10f64.powi(e as i32), format!("1e{e}")))
                .collect()
        } else {
            (0..=4)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                    (v, format!("{v:.3}"))
                })
                .collect()
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the chart. Points that are non-finite, or non-positive on a log
/// axis, are dropped.
pub fn render_svg(spec: &PlotSpec) -> String {
    let keep = |&(x, y): &(f64, f64)| {
        x.is_finite() && y.is_finite() && (!spec.x_log || x > 0.0) && (!spec.y_log || y > 0.0)
    };
    let all = || spec.series.iter().flat_map(|s| s.points.iter().copied().filter(keep));
    let xa = Axis::fit(all().map(|p| p.0), spec.x_log);
    let ya = Axis::fit(all().map(|p| p.1), spec.y_log);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + xa.frac(x) * pw;
    let py = |y: f64| TOP + (1.0 - ya.frac(y)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (v, label) in xa.ticks() {
        let x = px(v);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"##,
            TOP + ph,
            TOP + ph + 18.0
        );
    }
    for (v, label) in ya.ticks() {
        let y = py(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 20.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="24" y="{:.2}" text-anchor="middle" transform="rotate(-90 24 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&spec.y_label)
    );
    for (i, series) in spec.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .copied()
            .filter(keep)
            .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(&series.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_svg(spec: &PlotSpec, path: &Path) -> Result<()> {
    fs::write(path, render_svg(spec))?;
    Ok(())
}

/// Error and bound curves of one run against time (finite times only).
pub fn run_plot(record: &RunRecord) -> PlotSpec {
    let finite: Vec<&RunRow> = record.rows.iter().filter(|r| r.time.is_finite()).collect();
    let curve = |f: fn(&RunRow) -> f64| finite.iter().map(|r| (r.time.value(), f(r))).collect();
    PlotSpec {
        title: format!("n = {}, m = {}, d = {}", record.config.n, record.m, record.config.d),
        x_label: "t".into(),
        y_label: "error / norm".into(),
        x_log: true,
        y_log: true,
        series: vec![
            Series::new("train error", curve(|r| r.train_error)),
            Series::new("test error", curve(|r| r.test_error)),
            Series::new("|f_t| (test)", curve(|r| r.prediction_norm)),
            Series::new("rough bound", curve(|r| r.bound_rough)),
            Series::new("finer bound", curve(|r| r.bound_finer)),
        ],
    }
}

/// Writes `<stem>.csv`, `<stem>.svg` and `<stem>.meta.txt` under `dir`.
pub fn write_run(record: &RunRecord, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    emit_csv(record, &dir.join(format!("{stem}.csv")))?;
    emit_svg(&run_plot(record), &dir.join(format!("{stem}.svg")))?;
    fs::write(dir.join(format!("{stem}.meta.txt")), record.metadata())?;
    Ok(())
}

/// Iteration budgets of one run and the flow times they map to.
pub fn budget_table(record: &RunRecord) -> Table {
    let mut t = Table::new(&["iterations", "flow_time", "train_error", "test_error", "config_hash"]);
    for b in &record.budget_rows {
        t.push(vec![
            fmt_f64(b.iterations),
            fmt_f64(b.flow_time),
            fmt_f64(b.train_error),
            fmt_f64(b.test_error),
            record.config_hash.clone(),
        ]);
    }
    t
}

/// One row per sweep cell, with the test error at each iteration budget.
pub fn sweep_table(result: &SweepResult) -> Table {
    let budgets: Vec<String> = result
        .cells
        .first()
        .map(|c| c.record.budget_rows.iter().map(|b| format!("test_error_T{}", fmt_f64(b.iterations))).collect())
        .unwrap_or_default();
    let mut header = vec![
        "seed",
        "m",
        "gamma",
        "min_norm_test_error",
        "min_test_error",
        "argmin_time",
        "smallest_gram",
        "config_hash",
    ];
    header.extend(budgets.iter().map(String::as_str));
    let mut t = Table::new(&header);
    for (row, cell) in result.summary().iter().zip(&result.cells) {
        let mut r = vec![
            row.seed.to_string(),
            row.m.to_string(),
            fmt_f64(row.gamma),
            fmt_f64(row.min_norm_test_error),
            fmt_f64(row.min_test_error),
            fmt_f64(row.argmin_time),
            fmt_f64(row.smallest_gram),
            cell.record.config_hash.clone(),
        ];
        r.extend(row.budget_test_errors.iter().map(|&v| fmt_f64(v)));
        t.push(r);
    }
    t
}

/// Distinct axis values of a sweep in axis order.
fn sweep_ms(result: &SweepResult) -> Vec<(usize, usize)> {
    let mut ms: Vec<(usize, usize)> = result.cells.iter().map(|c| (c.index, c.m)).collect();
    ms.sort_unstable();
    ms.dedup();
    ms
}

/// Median over seeds of the min-norm and per-budget test errors against `m`.
pub fn sweep_plot(result: &SweepResult) -> PlotSpec {
    let ms = sweep_ms(result);
    let per_m = |f: &dyn Fn(&crate::experiment::SweepCell) -> f64| -> Vec<(f64, f64)> {
        ms.iter()
            .map(|&(i, m)| {
                let v: Vec<f64> = result.cells.iter().filter(|c| c.index == i).map(f).collect();
                (m as f64, median(&v))
            })
            .collect()
    };
    let mut series = vec![Series::new(
        "min-norm",
        per_m(&|c| c.record.min_norm_test().unwrap_or(f64::NAN)),
    )];
    let budgets = result.cells.first().map_or(0, |c| c.record.budget_rows.len());
    for k in 0..budgets {
        let iters = result.cells[0].record.budget_rows[k].iterations;
        series.push(Series::new(
            format!("T = {iters:e}"),
            per_m(&|c| c.record.budget_rows[k].test_error),
        ));
    }
    let n = result.cells.first().map_or(0, |c| c.record.config.n);
    PlotSpec {
        title: format!("test error against m, n = {n}"),
        x_label: "m".into(),
        y_label: "test error (median over seeds)".into(),
        x_log: true,
        y_log: true,
        series,
    }
}

/// Test error against time for the first seed, one curve per axis value.
pub fn sweep_curves_plot(result: &SweepResult) -> PlotSpec {
    let seed = result.cells.first().map_or(0, |c| c.seed);
    let series = result
        .cells
        .iter()
        .filter(|c| c.seed == seed)
        .map(|c| {
            Series::new(
                format!("m = {}", c.m),
                c.record
                    .rows
                    .iter()
                    .filter(|r| r.time.is_finite())
                    .map(|r| (r.time.value(), r.test_error))
                    .collect(),
            )
        })
        .collect();
    PlotSpec {
        title: format!("test error against t, seed {seed}"),
        x_label: "t".into(),
        y_label: "test error".into(),
        x_log: true,
        y_log: true,
        series,
    }
}

pub fn mp_table(study: &MpStudy) -> Table {
    let mut t = Table::new(&["gamma", "m", "mean_smallest", "median_smallest", "predicted", "replicates"]);
    for c in &study.cells {
        t.push(vec![
            fmt_f64(c.gamma),
            c.m.to_string(),
            fmt_f64(c.mean),
            fmt_f64(c.median),
            fmt_f64(study.predicted(c.gamma)),
            c.values.len().to_string(),
        ]);
    }
    t
}

pub fn mp_plot(study: &MpStudy) -> PlotSpec {
    let pts = |f: &dyn Fn(&crate::experiment::MpCell) -> f64| study.cells.iter().map(|c| (c.gamma, f(c))).collect();
    PlotSpec {
        title: format!("smallest Gram eigenvalue, n = {}, d = {}", study.n, study.d),
        x_label: "gamma = m / n".into(),
        y_label: "lambda_min".into(),
        x_log: true,
        y_log: true,
        series: vec![
            Series::new("mean", pts(&|c| c.mean)),
            Series::new("median", pts(&|c| c.median)),
            Series::new(
                format!("MP fit, c = {:.4e}", study.calibration.c),
                pts(&|c| study.predicted(c.gamma)),
            ),
        ],
    }
}

/// Ranked spectra of every replicate.
pub fn spectra_table(runs: &[SpectraRun]) -> Table {
    let mut t = Table::new(&["seed", "rank", "gram", "kernel", "analytic"]);
    for r in runs {
        for c in &r.report.top {
            t.push(vec![
                r.seed.to_string(),
                c.rank.to_string(),
                fmt_f64(c.gram),
                fmt_f64(c.kernel),
                fmt_f64(c.analytic),
            ]);
        }
    }
    t
}

pub fn spectra_plot(runs: &[SpectraRun]) -> PlotSpec {
    let ranked = |v: &[f64]| -> Vec<(f64, f64)> { v.iter().enumerate().map(|(i, &x)| ((i + 1) as f64, x)).collect() };
    let mut series = Vec::new();
    if let Some(r) = runs.first() {
        series.push(Series::new("Gram", ranked(&r.gram)));
        series.push(Series::new("kernel matrix", ranked(&r.kernel)));
        let analytic: Vec<f64> = r.report.top.iter().map(|c| c.analytic).collect();
        series.push(Series::new("analytic", ranked(&analytic)));
    }
    PlotSpec {
        title: "eigenvalues by rank".into(),
        x_label: "rank".into(),
        y_label: "eigenvalue".into(),
        x_log: true,
        y_log: true,
        series,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: Time, v: f64) -> RunRow {
        RunRow {
            time: t,
            train_error: v,
            test_error: v / 3.0,
            param_norm: v.sqrt(),
            prediction_norm: 0.0,
            bound_rough: 1e300 * v,
            bound_finer: f64::NAN,
            bound_finer_proof: 0.0,
        }
    }

    #[test]
    fn empty_is_header_only() {
        let s = run_csv(&[], "abc").unwrap();
        assert_eq!(s, "time,train_error,test_error,param_norm,bound_rough,bound_finer,config_hash\n");
        let (rows, hash) = read_run_csv(&s).unwrap();
        assert!(rows.is_empty() && hash.is_empty());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let rows: Vec<RunRow> = [0.1, 1.0 / 3.0, 7e-310, 2.0f64.sqrt()]
            .iter()
            .enumerate()
            .map(|(i, &v)| row(Time::Finite(10f64.powi(i as i32) / 7.0), v))
            .chain(std::iter::once(row(Time::Infinity, 0.5)))
            .collect();
        let text = run_csv(&rows, "0123456789abcdef").unwrap();
        let (back, hash) = read_run_csv(&text).unwrap();
        assert_eq!(hash, "0123456789abcdef");
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert!(CsvRow::from_run(a).bit_eq(b), "{a:?} vs {b:?}");
        }
        assert!(text.lines().last().unwrap().starts_with("inf,"));
    }

    #[test]
    fn formatting() {
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_f64(f64::NAN), "nan");
        assert_eq!(parse_f64("inf").unwrap(), f64::INFINITY);
        assert!(parse_f64("x").is_err());
    }

    fn spec() -> PlotSpec {
        PlotSpec {
            title: "a < b".into(),
            x_label: "t".into(),
            y_label: "e".into(),
            x_log: true,
            y_log: true,
            series: vec![
                Series::new("one", vec![(0.1, 1.0), (10.0, 2.0), (1e4, 0.5), (f64::INFINITY, 1.0)]),
                Series::new("two", vec![(1.0, 0.0), (100.0, 3.0)]),
            ],
        }
    }

    #[test]
    fn svg_is_deterministic_and_log_scaled() {
        let a = render_svg(&spec());
        assert_eq!(a, render_svg(&spec()));
        assert!(a.contains(r#"viewBox="0 0 960 600""#));
        assert_eq!(a.matches("<polyline").count(), 2);
        // decades 1e-1 .. 1e4
        for e in -1..=4 {
            assert!(a.contains(&format!(">1e{e}<")), "missing tick 1e{e}");
        }
        assert!(a.contains("a &lt; b"));
        assert!(a.contains(">one<") && a.contains(">two<"));
        // zero on the log axis is dropped, so series two has a single point
        let two = a.lines().filter(|l| l.starts_with("<polyline")).nth(1).unwrap();
        assert_eq!(two.matches(',').count(), 1);
    }

    #[test]
    fn svg_file_written() {
        let dir = tempfile::tempdir().unwrap();
        let (p, q) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
        emit_svg(&spec(), &p).unwrap();
        emit_svg(&spec(), &q).unwrap();
        assert_eq!(fs::read(p).unwrap(), fs::read(q).unwrap());
    }

    #[test]
    fn table_csv() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), fmt_f64(0.5)]);
        assert_eq!(t.to_csv().unwrap(), "a,b\n1,5.0000000000000000e-1\n");
    }
}
