//! Curve export: perturbation curves (m, k, R), share curves per orientation,
//! a combined share file that can be re-imported and re-integrated, and an
//! optional SVG area chart.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ordering::{Direction, PerturbationCurve};
use crate::proportionality::{Orientation, ShareCurve, ShareCurves, ShareKnot};

use super::report::{csv_error, format_line, parse_format_line, split_comments, write_text};

pub const SHARES_FORMAT: &str = "attrib-eval-shares";
pub const SHARES_VERSION: u32 = 1;

/// Everything needed to redraw and re-score one (image, method) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCurves {
    pub ablation: PerturbationCurve,
    pub construction: PerturbationCurve,
    pub shares: ShareCurves,
    pub y0: f64,
    pub yb: f64,
    pub epsilon: f64,
}

/// Keeps `[A-Za-z0-9._-]`, replacing anything else with `_`.
pub fn file_stem(image_id: &str, method: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
            .collect()
    };
    format!("{}_{}", clean(image_id), clean(method))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))
}

pub fn perturbation_csv(curve: &PerturbationCurve) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["m", "k", "R"]).map_err(csv_error)?;
    for p in &curve.points {
        w.write_record([p.m.to_string(), p.k.to_string(), p.r.to_string()])
            .map_err(csv_error)?;
    }
    finish(w)
}

pub fn share_curve_csv(curve: &ShareCurve) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["orientation", "m", "k", "R"]).map_err(csv_error)?;
    for p in curve.knots() {
        w.write_record([
            curve.orientation().name().to_string(),
            p.m.to_string(),
            p.k.to_string(),
            p.r.to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}

fn all_shares(curves: &ShareCurves) -> [&ShareCurve; 4] {
    [
        &curves.ablation_fwd,
        &curves.ablation_rev,
        &curves.construction_fwd,
        &curves.construction_rev,
    ]
}

/// The four share curves in one file, with the scores needed to re-derive TPN and TPS.
pub fn shares_csv(curves: &EvalCurves) -> Result<String> {
    let mut out = format_line(
        SHARES_FORMAT,
        SHARES_VERSION,
        &[
            ("y0", curves.y0.to_string()),
            ("yb", curves.yb.to_string()),
            ("epsilon", curves.epsilon.to_string()),
        ],
    );
    out.push('\n');
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["direction", "orientation", "m", "k", "R"]).map_err(csv_error)?;
    for c in all_shares(&curves.shares) {
        for p in c.knots() {
            w.write_record([
                c.direction().name().to_string(),
                c.orientation().name().to_string(),
                p.m.to_string(),
                p.k.to_string(),
                p.r.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    out.push_str(&finish(w)?);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportedShares {
    pub y0: f64,
    pub yb: f64,
    pub epsilon: f64,
    pub curves: ShareCurves,
}

pub fn parse_shares_csv(text: &str) -> Result<ImportedShares> {
    let (comments, body) = split_comments(text);
    let first = comments
        .first()
        .ok_or_else(|| Error::Format("shares CSV lacks its format line".into()))?;
    let fields = parse_format_line(first, SHARES_FORMAT, SHARES_VERSION)?;
    let num = |key: &str| -> Result<f64> {
        fields
            .iter()
            .find(|(k, _)| k == key)
            .and_then(|(_, v)| v.parse().ok())
            .ok_or_else(|| Error::Format(format!("shares header lacks {key}")))
    };
    let mut knots: [Vec<ShareKnot>; 4] = Default::default();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() != 5 {
            return Err(Error::Format("shares row needs 5 fields".into()));
        }
        let slot = match (&rec[0], rec[1].parse::<Orientation>()?) {
            ("ablation", Orientation::Forward) => 0,
            ("ablation", Orientation::Reversed) => 1,
            ("construction", Orientation::Forward) => 2,
            ("construction", Orientation::Reversed) => 3,
            (d, _) => return Err(Error::Format(format!("unknown direction {d:?}"))),
        };
        let bad = |what: &str| Error::Format(format!("bad {what} in shares row"));
        knots[slot].push(ShareKnot {
            m: rec[2].parse().map_err(|_| bad("m"))?,
            k: rec[3].parse().map_err(|_| bad("k"))?,
            r: rec[4].parse().map_err(|_| bad("R"))?,
        });
    }
    let [af, ar, cf, cr] = knots;
    Ok(ImportedShares {
        y0: num("y0")?,
        yb: num("yb")?,
        epsilon: num("epsilon")?,
        curves: ShareCurves {
            ablation_fwd: ShareCurve::new(af, Direction::Ablation, Orientation::Forward)?,
            ablation_rev: ShareCurve::new(ar, Direction::Ablation, Orientation::Reversed)?,
            construction_fwd: ShareCurve::new(cf, Direction::Construction, Orientation::Forward)?,
            construction_rev: ShareCurve::new(cr, Direction::Construction, Orientation::Reversed)?,
        },
    })
}

pub fn import_shares(path: impl AsRef<Path>) -> Result<ImportedShares> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_shares_csv(&text)
}

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 36.0;

fn panel(svg: &mut String, x0: f64, title: &str, fwd: &ShareCurve, rev: &ShareCurve) {
    let rs = fwd.knots().iter().chain(rev.knots()).map(|p| p.r);
    let (lo, hi) = rs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r), b.max(r)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let w = PANEL_W - 2.0 * MARGIN;
    let h = PANEL_H - 2.0 * MARGIN;
    let px = |k: f64| x0 + MARGIN + k * w;
    let py = |r: f64| MARGIN + (1.0 - (r - lo) / span) * h;
    let pts = |c: &ShareCurve, rev_order: bool| -> Vec<String> {
        let mut v: Vec<String> = c.knots().iter().map(|p| format!("{:.2},{:.2}", px(p.k), py(p.r))).collect();
        if rev_order {
            v.reverse();
        }
        v
    };
    let mut area = pts(fwd, false);
    area.extend(pts(rev, true));
    let _ = writeln!(
        svg,
        r##"<rect x="{:.2}" y="{MARGIN}" width="{w}" height="{h}" fill="none" stroke="#999"/>"##,
        x0 + MARGIN
    );
    let _ = writeln!(svg, r##"<polygon points="{}" fill="#f4a261" fill-opacity="0.35" stroke="none"/>"##, area.join(" "));
    let _ = writeln!(svg, r##"<polyline points="{}" fill="none" stroke="#1d3557" stroke-width="1.5"/>"##, pts(fwd, false).join(" "));
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#e63946" stroke-width="1.5" stroke-dasharray="4 3"/>"##,
        pts(rev, false).join(" ")
    );
    let _ = writeln!(svg, r#"<text x="{:.2}" y="20" font-size="13">{title}</text>"#, x0 + MARGIN);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="11">k (share of positive attribution)</text>"#,
        x0 + MARGIN,
        PANEL_H - 8.0
    );
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="10">{hi:.3}</text>"#, x0 + 2.0, MARGIN + 4.0);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="10">{lo:.3}</text>"#, x0 + 2.0, MARGIN + h);
}

/// Two panels (ablation, construction) shading the area between the forward
/// (solid) and reversed (dashed) share curves.
pub fn shares_svg(curves: &ShareCurves) -> String {
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{PANEL_H}" font-family="sans-serif">"#,
        2.0 * PANEL_W
    );
    svg.push('\n');
    panel(&mut svg, 0.0, "ablation (TPN area)", &curves.ablation_fwd, &curves.ablation_rev);
    panel(&mut svg, PANEL_W, "construction (TPS area)", &curves.construction_fwd, &curves.construction_rev);
    svg.push_str("</svg>\n");
    svg
}

/// Writes every curve file for one (image, method) pair into `dir`.
pub fn export_curves(dir: impl AsRef<Path>, image_id: &str, method: &str, curves: &EvalCurves, svg: bool) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = file_stem(image_id, method);
    let mut files: Vec<(PathBuf, String)> = vec![
        (dir.join(format!("{stem}_ablation.csv")), perturbation_csv(&curves.ablation)?),
        (dir.join(format!("{stem}_construction.csv")), perturbation_csv(&curves.construction)?),
    ];
    for c in all_shares(&curves.shares) {
        files.push((
            dir.join(format!("{stem}_{}_{}.csv", c.direction().name(), c.orientation().name())),
            share_curve_csv(c)?,
        ));
    }
    files.push((dir.join(format!("{stem}_shares.csv")), shares_csv(curves)?));
    if svg {
        files.push((dir.join(format!("{stem}_shares.svg")), shares_svg(&curves.shares)));
    }
    for (path, text) in &files {
        write_text(path, text)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
