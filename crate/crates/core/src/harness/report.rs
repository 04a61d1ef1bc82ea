//! Per-instance metric rows and their versioned CSV form.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_FORMAT: &str = "attrib-eval-metrics";
pub const METRICS_VERSION: u32 = 1;
pub const METRICS_COLUMNS: [&str; 15] = [
    "image_id",
    "method",
    "class_index",
    "y0",
    "yb",
    "m",
    "n_ord",
    "s_ord",
    "aopc",
    "tpn",
    "tps",
    "r",
    "r_prime",
    "runtime_ms",
    "status",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Ok,
    EmptyPositiveSet,
    DegenerateScore,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::EmptyPositiveSet => "empty-positive-set",
            Status::DegenerateScore => "degenerate-score",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(Status::Ok),
            "empty-positive-set" => Ok(Status::EmptyPositiveSet),
            "degenerate-score" => Ok(Status::DegenerateScore),
            other => Err(Error::Format(format!("unknown status {other:?}"))),
        }
    }
}

/// One (image, method) evaluation. Metrics that could not be computed are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub image_id: String,
    pub method: String,
    pub class_index: usize,
    pub y0: f64,
    pub yb: f64,
    pub m: usize,
    pub n_ord: Option<f64>,
    pub s_ord: Option<f64>,
    pub aopc: Option<f64>,
    pub tpn: Option<f64>,
    pub tps: Option<f64>,
    pub r: Option<f64>,
    pub r_prime: Option<f64>,
    pub runtime_ms: Option<f64>,
    pub status: Status,
}

impl MetricReport {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    /// Value of a named metric column.
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "n_ord" => self.n_ord,
            "s_ord" => self.s_ord,
            "one_minus_s_ord" => self.s_ord.map(|s| 1.0 - s),
            "aopc" => self.aopc,
            "tpn" => self.tpn,
            "tps" => self.tps,
            "r" => self.r,
            "r_prime" => self.r_prime,
            _ => None,
        }
    }
}

/// Canonical row order: image id, then method name.
pub fn sort_reports(reports: &mut [MetricReport]) {
    reports.sort_by(|a, b| a.image_id.cmp(&b.image_id).then_with(|| a.method.cmp(&b.method)));
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub(crate) fn format_line(format: &str, version: u32, extra: &[(&str, String)]) -> String {
    let mut line = format!("#format={format};version={version}");
    for (k, v) in extra {
        line.push_str(&format!(";{k}={v}"));
    }
    line
}

/// Parses a `#format=…;version=…;key=value` line, checking name and version.
pub(crate) fn parse_format_line(line: &str, format: &str, version: u32) -> Result<Vec<(String, String)>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Format(format!("missing {format} header line")))?;
    let fields: Vec<(String, String)> = body
        .split(';')
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Format(format!("bad header field {kv:?}")))
        })
        .collect::<Result<_>>()?;
    let get = |key: &str| fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    if get("format") != Some(format) {
        return Err(Error::Format(format!("expected a {format} file, header is {line:?}")));
    }
    let found = get("version").ok_or_else(|| Error::Format("header lacks a version".into()))?;
    if found != version.to_string() {
        return Err(Error::Version {
            what: "CSV",
            found: found.to_string(),
            expected: version,
        });
    }
    Ok(fields)
}

/// Splits off the leading `#` lines of a CSV document.
pub(crate) fn split_comments(text: &str) -> (Vec<&str>, &str) {
    let mut comments = Vec::new();
    let mut rest = text;
    while rest.starts_with('#') {
        let (line, tail) = rest.split_once('\n').unwrap_or((rest, ""));
        comments.push(line.trim_end_matches('\r'));
        rest = tail;
    }
    (comments, rest)
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Serializes rows in the order given.
pub fn metrics_csv(reports: &[MetricReport]) -> Result<String> {
    let mut out = format_line(METRICS_FORMAT, METRICS_VERSION, &[]);
    out.push('\n');
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_COLUMNS).map_err(csv_error)?;
    for r in reports {
        w.write_record([
            r.image_id.clone(),
            r.method.clone(),
            r.class_index.to_string(),
            r.y0.to_string(),
            r.yb.to_string(),
            r.m.to_string(),
            fmt_opt(r.n_ord),
            fmt_opt(r.s_ord),
            fmt_opt(r.aopc),
            fmt_opt(r.tpn),
            fmt_opt(r.tps),
            fmt_opt(r.r),
            fmt_opt(r.r_prime),
            fmt_opt(r.runtime_ms),
            r.status.name().to_string(),
        ])
        .map_err(csv_error)?;
    }
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    out.push_str(&String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))?);
    Ok(out)
}

fn parse_f64(field: &str, column: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("column {column}: {field:?} is not a number")))
}

fn parse_opt(field: &str, column: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, column).map(Some)
    }
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricReport>> {
    let (comments, body) = split_comments(text);
    let first = comments
        .first()
        .ok_or_else(|| Error::Format("metrics CSV lacks its format line".into()))?;
    parse_format_line(first, METRICS_FORMAT, METRICS_VERSION)?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.iter().ne(METRICS_COLUMNS) {
        return Err(Error::Format(format!("unexpected metrics columns {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let f = |i: usize| &rec[i];
        rows.push(MetricReport {
            image_id: f(0).to_string(),
            method: f(1).to_string(),
            class_index: f(2)
                .parse()
                .map_err(|_| Error::Format(format!("bad class_index {:?}", f(2))))?,
            y0: parse_f64(f(3), "y0")?,
            yb: parse_f64(f(4), "yb")?,
            m: f(5).parse().map_err(|_| Error::Format(format!("bad m {:?}", f(5))))?,
            n_ord: parse_opt(f(6), "n_ord")?,
            s_ord: parse_opt(f(7), "s_ord")?,
            aopc: parse_opt(f(8), "aopc")?,
            tpn: parse_opt(f(9), "tpn")?,
            tps: parse_opt(f(10), "tps")?,
            r: parse_opt(f(11), "r")?,
            r_prime: parse_opt(f(12), "r_prime")?,
            runtime_ms: parse_opt(f(13), "runtime_ms")?,
            status: f(14).parse()?,
        });
    }
    Ok(rows)
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricReport>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
