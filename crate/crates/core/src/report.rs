//! Report emission: CSV tables, JSON documents and log-log SVG plots,
//! written atomically.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::rates::RateReport;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Svg => "svg",
        }
    }
}

/// Header plus rows of already formatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Shortest round-trip representation, in exponent form when very large or small.
pub fn fmt_float(x: f64) -> String {
    format!("{x:?}")
}

fn csv_cell(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for line in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = line.iter().map(|c| csv_cell(c)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Formats each value of a row of floats.
pub fn float_row(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| fmt_float(*v)).collect()
}

/// Everything a command produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub command: String,
    pub table: Table,
    pub json: Value,
    pub svg: Option<String>,
}

impl Report {
    /// Wraps `payload` (an object) with the command name and schema version.
    pub fn new(command: &str, table: Table, payload: Value) -> Self {
        let mut doc = Map::new();
        doc.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
        doc.insert("command".into(), Value::from(command));
        match payload {
            Value::Object(fields) => doc.extend(fields),
            other => {
                doc.insert("result".into(), other);
            }
        }
        Self {
            command: command.to_string(),
            table,
            json: Value::Object(doc),
            svg: None,
        }
    }

    pub fn json_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.json).expect("JSON values always serialize");
        s.push('\n');
        s
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e: std::io::Error| Error::IoFailure(format!("{}: {e}", path.display()));
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Writes one format of `report` as `<dir>/<command>.<ext>`.
pub fn emit_report(report: &Report, format: Format, dir: &Path) -> Result<PathBuf> {
    if report.table.is_empty() {
        return Err(Error::InvalidArgument("report has no results".into()));
    }
    let path = dir.join(format!("{}.{}", report.command, format.extension()));
    let text = match format {
        Format::Csv => report.table.to_csv(),
        Format::Json => report.json_text(),
        Format::Svg => report
            .svg
            .clone()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no plot", report.command)))?,
    };
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Twelve significant digits.
pub fn fmt_sig12(x: f64) -> String {
    format!("{x:.11e}")
}

/// Self-contained log-log plot of distances against `n`, with the fitted line.
pub fn rate_svg(report: &RateReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 60.0;
    let pts: Vec<(f64, f64)> = report
        .points
        .iter()
        .filter(|p| p.distance > 0.0)
        .map(|p| ((p.n as f64).log10(), p.distance.log10()))
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-9 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let _ = writeln!(
        svg,
        r#"<path d="M {} {} L {} {} L {} {}" stroke="black" fill="none"/>"#,
        fmt_sig12(M),
        fmt_sig12(M),
        fmt_sig12(M),
        fmt_sig12(H - M),
        fmt_sig12(W - M),
        fmt_sig12(H - M)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">log10 n</text>"#,
        W / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" font-size="14" transform="rotate(-90 15 {})" text-anchor="middle">log10 distance</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (x, y) in &pts {
        let _ = writeln!(
            svg,
            r#"<circle cx="{}" cy="{}" r="4" fill="steelblue"/>"#,
            fmt_sig12(px(*x)),
            fmt_sig12(py(*y))
        );
    }
    if let Some(fit) = &report.fit {
        // ln d = a + b ln n  ⇔  log10 d = a / ln 10 + b log10 n
        let a = fit.intercept / std::f64::consts::LN_10;
        let line = |x: f64| a + fit.slope * x;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="firebrick"/>"#,
            fmt_sig12(px(x0)),
            fmt_sig12(py(line(x0))),
            fmt_sig12(px(x1)),
            fmt_sig12(py(line(x1)))
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="14">slope {}</text>"#,
            W - M - 180.0,
            M - 20.0,
            fmt_sig12(fit.slope)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::RatePoint;

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&["n", "distance", "method"]);
        t.push(vec!["64".into(), fmt_float(0.125), "exact-dp".into()]);
        t.push(vec!["1".into(), fmt_float(1e-20), "a,b".into()]);
        assert_eq!(t.to_csv(), "n,distance,method\n64,0.125,exact-dp\n1,1e-20,\"a,b\"\n");
    }

    #[test]
    fn json_document_shape() {
        let r = Report::new("poisson", Table::new(&["x"]), serde_json::json!({"sigma2": 0.5}));
        assert_eq!(r.json["schema_version"], 1);
        assert_eq!(r.json["command"], "poisson");
        let back: Value = serde_json::from_str(&r.json_text()).unwrap();
        assert_eq!(back, r.json);
    }

    #[test]
    fn emit_requires_rows() {
        let dir = tempfile::tempdir().unwrap();
        let r = Report::new("rate", Table::new(&["n"]), Value::Null);
        assert!(emit_report(&r, Format::Csv, dir.path()).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn svg_is_self_contained() {
        let points = [64usize, 128, 256, 512]
            .iter()
            .map(|n| RatePoint::exact(*n, 1.0 / (*n as f64).sqrt()))
            .collect();
        let svg = rate_svg(&RateReport::new(points, 1.0));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(svg.contains("slope -5.00000000000e-1"));
    }
}
