//! Per-method quartile summaries and per-criterion winner tables.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

use super::report::{
    csv_error, fmt_opt, format_line, parse_format_line, split_comments, MetricReport,
};

pub const SUMMARY_FORMAT: &str = "attrib-eval-summary";
pub const SUMMARY_VERSION: u32 = 1;
pub const WINNERS_FORMAT: &str = "attrib-eval-winners";
pub const WINNERS_VERSION: u32 = 1;
pub const SUMMARY_METRICS: [&str; 6] = ["n_ord", "s_ord", "one_minus_s_ord", "aopc", "tpn", "tps"];
pub const SUMMARY_COLUMNS: [&str; 10] = [
    "method",
    "metric",
    "min",
    "q1",
    "median",
    "q3",
    "max",
    "mean",
    "count",
    "excluded_count",
];
/// Values this close (relative to the best) count as a tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput("quantile of no values".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Range(format!("quantile level {p}")));
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn median(values: &[f64]) -> Result<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, 0.5)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Result<Stats> {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        Ok(Stats {
            min: quantile_sorted(&v, 0.0)?,
            q1: quantile_sorted(&v, 0.25)?,
            median: quantile_sorted(&v, 0.5)?,
            q3: quantile_sorted(&v, 0.75)?,
            max: quantile_sorted(&v, 1.0)?,
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub metric: String,
    /// `None` when every row of the method was excluded.
    pub stats: Option<Stats>,
    pub count: usize,
    pub excluded_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateSummary {
    pub rows: Vec<SummaryRow>,
    pub images: usize,
    pub excluded_rows: usize,
}

impl AggregateSummary {
    pub fn get(&self, method: &str, metric: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.metric == metric)
    }
}

/// Quartiles of every summary metric over the ok rows of each method.
pub fn summarize(reports: &[MetricReport]) -> Result<AggregateSummary> {
    let mut by_method: BTreeMap<&str, Vec<&MetricReport>> = BTreeMap::new();
    for r in reports {
        by_method.entry(&r.method).or_default().push(r);
    }
    let images: BTreeSet<&str> = reports.iter().map(|r| r.image_id.as_str()).collect();
    let mut rows = Vec::new();
    for (method, group) in &by_method {
        for metric in SUMMARY_METRICS {
            let values: Vec<f64> = group
                .iter()
                .filter(|r| r.is_ok())
                .map(|r| {
                    r.metric(metric)
                        .ok_or_else(|| Error::Format(format!("ok row {}/{} lacks {metric}", r.image_id, r.method)))
                })
                .collect::<Result<_>>()?;
            rows.push(SummaryRow {
                method: method.to_string(),
                metric: metric.to_string(),
                stats: if values.is_empty() { None } else { Some(Stats::of(&values)?) },
                count: values.len(),
                excluded_count: group.len() - values.len(),
            });
        }
    }
    Ok(AggregateSummary {
        rows,
        images: images.len(),
        excluded_rows: reports.iter().filter(|r| !r.is_ok()).count(),
    })
}

pub fn summary_csv(summary: &AggregateSummary) -> Result<String> {
    let mut out = format_line(SUMMARY_FORMAT, SUMMARY_VERSION, &[]);
    out.push_str("\n#quantiles=type-7 linear interpolation");
    out.push_str(&format!(
        "\n#images={};excluded_rows={}\n",
        summary.images, summary.excluded_rows
    ));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS).map_err(csv_error)?;
    for row in &summary.rows {
        let s = row.stats.as_ref();
        w.write_record([
            row.method.clone(),
            row.metric.clone(),
            fmt_opt(s.map(|s| s.min)),
            fmt_opt(s.map(|s| s.q1)),
            fmt_opt(s.map(|s| s.median)),
            fmt_opt(s.map(|s| s.q3)),
            fmt_opt(s.map(|s| s.max)),
            fmt_opt(s.map(|s| s.mean)),
            row.count.to_string(),
            row.excluded_count.to_string(),
        ])
        .map_err(csv_error)?;
    }
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    out.push_str(&String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))?);
    Ok(out)
}

pub fn parse_summary_csv(text: &str) -> Result<AggregateSummary> {
    let (comments, body) = split_comments(text);
    let first = comments
        .first()
        .ok_or_else(|| Error::Format("summary CSV lacks its format line".into()))?;
    parse_format_line(first, SUMMARY_FORMAT, SUMMARY_VERSION)?;
    let mut images = None;
    let mut excluded_rows = None;
    for line in &comments[1..] {
        for kv in line.trim_start_matches('#').split(';') {
            match kv.split_once('=') {
                Some(("images", v)) => images = v.parse().ok(),
                Some(("excluded_rows", v)) => excluded_rows = v.parse().ok(),
                _ => {}
            }
        }
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    if rdr.headers().map_err(csv_error)?.iter().ne(SUMMARY_COLUMNS) {
        return Err(Error::Format("unexpected summary columns".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s:?}")));
    let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad count {s:?}")));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let stats = if rec[2].is_empty() {
            None
        } else {
            Some(Stats {
                min: num(&rec[2])?,
                q1: num(&rec[3])?,
                median: num(&rec[4])?,
                q3: num(&rec[5])?,
                max: num(&rec[6])?,
                mean: num(&rec[7])?,
            })
        };
        rows.push(SummaryRow {
            method: rec[0].to_string(),
            metric: rec[1].to_string(),
            stats,
            count: int(&rec[8])?,
            excluded_count: int(&rec[9])?,
        });
    }
    Ok(AggregateSummary {
        rows,
        images: images.ok_or_else(|| Error::Format("summary lacks an image count".into()))?,
        excluded_rows: excluded_rows.ok_or_else(|| Error::Format("summary lacks an excluded count".into()))?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    NOrd,
    SOrd,
    Tpn,
    Tps,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::NOrd, Criterion::SOrd, Criterion::Tpn, Criterion::Tps];

    pub fn metric(self) -> &'static str {
        match self {
            Criterion::NOrd => "n_ord",
            Criterion::SOrd => "s_ord",
            Criterion::Tpn => "tpn",
            Criterion::Tps => "tps",
        }
    }

    /// S-Ord is the only criterion where higher is better.
    pub fn higher_is_better(self) -> bool {
        self == Criterion::SOrd
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WinnerEntry {
    /// An image id, or `median` for the global table.
    pub scope: String,
    pub criterion: Criterion,
    /// Several names when tied, sorted.
    pub winners: Vec<String>,
    pub value: f64,
}

fn best_of(scope: &str, criterion: Criterion, candidates: &[(String, f64)]) -> Option<WinnerEntry> {
    let better = |a: f64, b: f64| if criterion.higher_is_better() { a > b } else { a < b };
    let best = candidates.iter().map(|c| c.1).reduce(|a, b| if better(b, a) { b } else { a })?;
    let tol = TIE_TOLERANCE * best.abs().max(1.0);
    let mut winners: Vec<String> = candidates
        .iter()
        .filter(|c| (c.1 - best).abs() <= tol)
        .map(|c| c.0.clone())
        .collect();
    winners.sort();
    winners.dedup();
    Some(WinnerEntry {
        scope: scope.to_string(),
        criterion,
        winners,
        value: best,
    })
}

/// Best method per criterion, per image or on per-method medians over ok rows.
pub fn select_winners(reports: &[MetricReport], per_image: bool) -> Result<Vec<WinnerEntry>> {
    let ok: Vec<&MetricReport> = reports.iter().filter(|r| r.is_ok()).collect();
    if ok.is_empty() {
        return Err(Error::EmptyInput("no ok rows to pick winners from".into()));
    }
    let mut out = Vec::new();
    if per_image {
        let mut by_image: BTreeMap<&str, Vec<&MetricReport>> = BTreeMap::new();
        for r in &ok {
            by_image.entry(&r.image_id).or_default().push(r);
        }
        for (image, rows) in by_image {
            for c in Criterion::ALL {
                let cands: Vec<(String, f64)> = rows
                    .iter()
                    .filter_map(|r| r.metric(c.metric()).map(|v| (r.method.clone(), v)))
                    .collect();
                out.extend(best_of(image, c, &cands));
            }
        }
    } else {
        let mut by_method: BTreeMap<&str, Vec<&MetricReport>> = BTreeMap::new();
        for r in &ok {
            by_method.entry(&r.method).or_default().push(r);
        }
        for c in Criterion::ALL {
            let mut cands = Vec::new();
            for (method, rows) in &by_method {
                let values: Vec<f64> = rows.iter().filter_map(|r| r.metric(c.metric())).collect();
                if !values.is_empty() {
                    cands.push((method.to_string(), median(&values)?));
                }
            }
            out.extend(best_of("median", c, &cands));
        }
    }
    Ok(out)
}

pub fn winners_csv(entries: &[WinnerEntry]) -> Result<String> {
    let mut out = format_line(WINNERS_FORMAT, WINNERS_VERSION, &[("tie_tolerance", TIE_TOLERANCE.to_string())]);
    out.push('\n');
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scope", "criterion", "winners", "value", "tied"]).map_err(csv_error)?;
    for e in entries {
        w.write_record([
            e.scope.clone(),
            e.criterion.metric().to_string(),
            e.winners.join("|"),
            e.value.to_string(),
            (e.winners.len() > 1).to_string(),
        ])
        .map_err(csv_error)?;
    }
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    out.push_str(&String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::report::Status;

    fn row(image: &str, method: &str, n: f64, s: f64) -> MetricReport {
        MetricReport {
            image_id: image.into(),
            method: method.into(),
            class_index: 0,
            y0: 1.0,
            yb: 0.0,
            m: 3,
            n_ord: Some(n),
            s_ord: Some(s),
            aopc: Some(0.0),
            tpn: Some(n),
            tps: Some(n),
            r: Some(1.0),
            r_prime: Some(1.0),
            runtime_ms: None,
            status: Status::Ok,
        }
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.25).unwrap(), 1.75);
        assert_eq!(quantile_sorted(&v, 0.5).unwrap(), 2.5);
        assert_eq!(quantile_sorted(&v, 0.75).unwrap(), 3.25);
        assert_eq!(quantile_sorted(&[5.0], 0.3).unwrap(), 5.0);
        assert!(quantile_sorted(&[], 0.5).is_err());
    }

    #[test]
    fn summary_counts_and_round_trip() {
        let mut rows = vec![row("a", "x", 0.1, -0.5), row("b", "x", 0.3, -0.25), row("c", "x", 0.2, 0.0)];
        let mut bad = row("c", "y", 0.0, 0.0);
        bad.status = Status::EmptyPositiveSet;
        rows.push(bad);
        let s = summarize(&rows).unwrap();
        assert_eq!(s.images, 3);
        assert_eq!(s.excluded_rows, 1);
        let x = s.get("x", "n_ord").unwrap();
        assert_eq!((x.count, x.excluded_count), (3, 0));
        assert_eq!(x.stats.as_ref().unwrap().median, 0.2);
        let oms = s.get("x", "one_minus_s_ord").unwrap().stats.clone().unwrap();
        assert_eq!(oms.median, 1.25);
        let y = s.get("y", "tpn").unwrap();
        assert_eq!((y.count, y.excluded_count, y.stats.is_none()), (0, 1, true));
        let text = summary_csv(&s).unwrap();
        assert!(text.contains("#quantiles=type-7"));
        assert_eq!(parse_summary_csv(&text).unwrap(), s);
        assert!(matches!(
            parse_summary_csv(&text.replace("version=1", "version=7")),
            Err(Error::Version { .. })
        ));
    }

    #[test]
    fn winners_and_ties() {
        let rows = vec![row("a", "p", 0.2, -0.1), row("a", "q", 0.2, -0.3), row("a", "r", 0.5, -0.1)];
        let w = select_winners(&rows, true).unwrap();
        assert_eq!(w[0].criterion, Criterion::NOrd);
        assert_eq!(w[0].winners, vec!["p", "q"]);
        assert_eq!(w[1].winners, vec!["p", "r"]);
        let single = select_winners(&rows[..1], false).unwrap();
        assert!(single.iter().all(|e| e.winners == vec!["p"]));
        assert!(matches!(select_winners(&[], false), Err(Error::EmptyInput(_))));
        assert!(winners_csv(&w).unwrap().contains("a,n_ord,p|q,0.2,true"));
    }
}
