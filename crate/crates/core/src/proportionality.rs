//! Proportionality-k and total proportionality (TPN, TPS) over share-indexed
//! perturbation curves.

use crate::error::{Error, Result};
use crate::ordering::{eval_prefixes, ClassScore, Direction, OrderedPixels};
use crate::par::Parallelism;
use crate::tensor::Tensor;

/// Default stabilizer for the penalty ratios.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Forward follows π⁺ (descending scores); reversed follows π̂⁺ (ascending).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    Forward,
    Reversed,
}

impl Orientation {
    pub fn name(self) -> &'static str {
        match self {
            Orientation::Forward => "forward",
            Orientation::Reversed => "reversed",
        }
    }
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" | "fwd" => Ok(Orientation::Forward),
            "reversed" | "rev" => Ok(Orientation::Reversed),
            other => Err(Error::Format(format!("unknown orientation {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShareKnot {
    /// Cumulative share of positive attribution perturbed.
    pub k: f64,
    /// Model output at that share.
    pub r: f64,
    /// Number of pixels perturbed.
    pub m: usize,
}

/// Piecewise-linear curve of model output against attribution share.
#[derive(Clone, Debug, PartialEq)]
pub struct ShareCurve {
    knots: Vec<ShareKnot>,
    direction: Direction,
    orientation: Orientation,
}

impl ShareCurve {
    /// Validates that `k` starts at 0, ends at 1, and strictly increases.
    pub fn new(knots: Vec<ShareKnot>, direction: Direction, orientation: Orientation) -> Result<ShareCurve> {
        if knots.len() < 2 {
            return Err(Error::Shape(format!("share curve needs 2 knots, got {}", knots.len())));
        }
        if knots.iter().any(|p| !p.k.is_finite() || !p.r.is_finite()) {
            return Err(Error::NonFinite("share curve knot".into()));
        }
        if knots[0].k != 0.0 || knots[knots.len() - 1].k != 1.0 {
            return Err(Error::Range("share curve must span k = 0 to k = 1".into()));
        }
        if knots.windows(2).any(|w| w[1].k <= w[0].k) {
            return Err(Error::Range("share curve k must strictly increase".into()));
        }
        Ok(ShareCurve {
            knots,
            direction,
            orientation,
        })
    }

    pub fn knots(&self) -> &[ShareKnot] {
        &self.knots
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    /// Output at k = 1, with every positive pixel perturbed.
    pub fn last(&self) -> f64 {
        self.knots[self.knots.len() - 1].r
    }

    /// Linear interpolation between knots.
    pub fn eval(&self, k: f64) -> Result<f64> {
        check_k(k)?;
        let i = self.knots.partition_point(|p| p.k < k);
        if i == 0 {
            return Ok(self.knots[0].r);
        }
        let (a, b) = (self.knots[i - 1], self.knots[i]);
        if b.k == k {
            return Ok(b.r);
        }
        let t = (k - a.k) / (b.k - a.k);
        Ok(a.r + t * (b.r - a.r))
    }
}

fn check_k(k: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::Range(format!("k = {k} outside [0, 1]")));
    }
    Ok(())
}

/// Pixels of π⁺ (or its reversal) with the prefix lengths and shares at which
/// runs of equal scores end.
fn oriented_knots(ordered: &OrderedPixels, orientation: Orientation) -> (Vec<usize>, Vec<(usize, f64)>) {
    let m = ordered.positive_count();
    let mut pixels = ordered.positive_prefix().to_vec();
    let mut scores = ordered.scores()[..m].to_vec();
    if orientation == Orientation::Reversed {
        pixels.reverse();
        scores.reverse();
    }
    let total = ordered.total_positive();
    let mut knots = vec![(0, 0.0)];
    let mut acc = 0.0;
    for i in 0..m {
        acc += scores[i];
        if i + 1 == m {
            knots.push((m, 1.0));
        } else if scores[i + 1] != scores[i] {
            knots.push((i + 1, acc / total));
        }
    }
    (pixels, knots)
}

/// Evaluates the model at every attainable prefix share of the chosen
/// orientation. `chunk > 1` keeps every `chunk`-th run end plus the last.
#[allow(clippy::too_many_arguments)]
pub fn share_curve<S: ClassScore>(
    scorer: &S,
    x: &Tensor,
    ordered: &OrderedPixels,
    b: f64,
    direction: Direction,
    orientation: Orientation,
    chunk: usize,
    mode: Parallelism,
) -> Result<ShareCurve> {
    if ordered.positive_count() == 0 {
        return Err(Error::EmptyPositiveSet);
    }
    if chunk == 0 {
        return Err(Error::Config("chunk must be at least 1".into()));
    }
    let (pixels, all) = oriented_knots(ordered, orientation);
    let last = all.len() - 1;
    let kept: Vec<(usize, f64)> = all
        .into_iter()
        .enumerate()
        .filter(|&(i, _)| i % chunk == 0 || i == last)
        .map(|(_, kn)| kn)
        .collect();
    let lengths: Vec<usize> = kept.iter().map(|&(m, _)| m).collect();
    let values = eval_prefixes(scorer, x, &pixels, &lengths, direction, b, mode)?;
    let knots = kept
        .iter()
        .zip(values)
        .map(|(&(m, k), r)| ShareKnot { k, r, m })
        .collect();
    ShareCurve::new(knots, direction, orientation)
}

fn check_pair(fwd: &ShareCurve, rev: &ShareCurve, direction: Direction) -> Result<()> {
    for c in [fwd, rev] {
        if c.direction != direction {
            return Err(Error::Config(format!(
                "expected {} curves, got {}",
                direction.name(),
                c.direction.name()
            )));
        }
    }
    if fwd.orientation != Orientation::Forward || rev.orientation != Orientation::Reversed {
        return Err(Error::Config("expected a forward and a reversed curve".into()));
    }
    Ok(())
}

/// N^k_p: gap between forward and reversed ablation curves at share `k`.
pub fn prop_k_necessity(fwd: &ShareCurve, rev: &ShareCurve, k: f64) -> Result<f64> {
    check_pair(fwd, rev, Direction::Ablation)?;
    Ok((fwd.eval(k)? - rev.eval(k)?).abs())
}

/// S^k_p: gap between forward and reversed construction curves at share `k`.
pub fn prop_k_sufficiency(fwd: &ShareCurve, rev: &ShareCurve, k: f64) -> Result<f64> {
    check_pair(fwd, rev, Direction::Construction)?;
    Ok((fwd.eval(k)? - rev.eval(k)?).abs())
}

/// ∫₀¹ |f(k) − g(k)| dk for two piecewise-linear curves, exact up to rounding.
pub fn area_between(f: &ShareCurve, g: &ShareCurve) -> f64 {
    let mut ks: Vec<f64> = f.knots.iter().chain(&g.knots).map(|p| p.k).collect();
    ks.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    ks.dedup();
    let diff = |k: f64| f.eval(k).expect("k in range") - g.eval(k).expect("k in range");
    let mut area = 0.0;
    let mut d0 = diff(ks[0]);
    for w in ks.windows(2) {
        let d1 = diff(w[1]);
        let h = w[1] - w[0];
        area += if d0 * d1 >= 0.0 {
            0.5 * h * (d0.abs() + d1.abs())
        } else {
            0.5 * h * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs())
        };
        d0 = d1;
    }
    area
}

/// Midpoint-rule estimate of the same area on `samples` cells.
pub fn riemann_area(f: &ShareCurve, g: &ShareCurve, samples: usize) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Config("riemann samples must be at least 1".into()));
    }
    let h = 1.0 / samples as f64;
    let mut total = 0.0;
    for i in 0..samples {
        let k = (i as f64 + 0.5) * h;
        total += (f.eval(k)? - g.eval(k)?).abs();
    }
    Ok(total * h)
}

fn check_scale(y0: f64, epsilon: f64) -> Result<()> {
    if epsilon.is_nan() || epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if !y0.is_finite() || y0 <= epsilon {
        return Err(Error::DegenerateScore(y0));
    }
    Ok(())
}

/// Necessity penalty `min{(y_b+ε)/(R_M+ε), 1}` with both scores clipped at 0.
pub fn necessity_penalty(yb: f64, r_m: f64, epsilon: f64) -> f64 {
    ((yb.max(0.0) + epsilon) / (r_m.max(0.0) + epsilon)).min(1.0)
}

/// Sufficiency penalty `min{(R'_M+ε)/(y_0+ε), 1}` with R'_M clipped at 0.
pub fn sufficiency_penalty(y0: f64, r_m: f64, epsilon: f64) -> f64 {
    ((r_m.max(0.0) + epsilon) / (y0 + epsilon)).min(1.0)
}

/// Total proportionality for necessity. Lower is better; 0 is optimal.
pub fn tpn(fwd: &ShareCurve, rev: &ShareCurve, y0: f64, yb: f64, epsilon: f64) -> Result<f64> {
    check_pair(fwd, rev, Direction::Ablation)?;
    check_scale(y0, epsilon)?;
    let area = area_between(fwd, rev);
    if area == 0.0 {
        return Ok(0.0);
    }
    Ok(area / (necessity_penalty(yb, fwd.last(), epsilon) * y0))
}

/// Total proportionality for sufficiency. Lower is better; 0 is optimal.
pub fn tps(fwd: &ShareCurve, rev: &ShareCurve, y0: f64, epsilon: f64) -> Result<f64> {
    check_pair(fwd, rev, Direction::Construction)?;
    check_scale(y0, epsilon)?;
    let area = area_between(fwd, rev);
    if area == 0.0 {
        return Ok(0.0);
    }
    Ok(area / (sufficiency_penalty(y0, fwd.last(), epsilon) * y0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProportionalityReport {
    pub tpn: f64,
    pub tps: f64,
    pub r: f64,
    pub r_prime: f64,
    /// Set when a Riemann cross-check was requested.
    pub k_samples: Option<usize>,
    /// Riemann estimates of (TPN, TPS), when requested.
    pub riemann: Option<(f64, f64)>,
    pub epsilon: f64,
}

/// The four share curves behind a [`ProportionalityReport`].
#[derive(Clone, Debug, PartialEq)]
pub struct ShareCurves {
    pub ablation_fwd: ShareCurve,
    pub ablation_rev: ShareCurve,
    pub construction_fwd: ShareCurve,
    pub construction_rev: ShareCurve,
}

/// Builds all four share curves and both totals for one map.
#[allow(clippy::too_many_arguments)]
pub fn proportionality<S: ClassScore>(
    scorer: &S,
    x: &Tensor,
    ordered: &OrderedPixels,
    b: f64,
    y0: f64,
    yb: f64,
    chunk: usize,
    epsilon: f64,
    k_samples: Option<usize>,
    mode: Parallelism,
) -> Result<(ProportionalityReport, ShareCurves)> {
    check_scale(y0, epsilon)?;
    let curve = |d, o| share_curve(scorer, x, ordered, b, d, o, chunk, mode);
    let curves = ShareCurves {
        ablation_fwd: curve(Direction::Ablation, Orientation::Forward)?,
        ablation_rev: curve(Direction::Ablation, Orientation::Reversed)?,
        construction_fwd: curve(Direction::Construction, Orientation::Forward)?,
        construction_rev: curve(Direction::Construction, Orientation::Reversed)?,
    };
    let n = tpn(&curves.ablation_fwd, &curves.ablation_rev, y0, yb, epsilon)?;
    let s = tps(&curves.construction_fwd, &curves.construction_rev, y0, epsilon)?;
    let r = necessity_penalty(yb, curves.ablation_fwd.last(), epsilon);
    let r_prime = sufficiency_penalty(y0, curves.construction_fwd.last(), epsilon);
    let riemann = match k_samples {
        Some(samples) => {
            let an = riemann_area(&curves.ablation_fwd, &curves.ablation_rev, samples)?;
            let sn = riemann_area(&curves.construction_fwd, &curves.construction_rev, samples)?;
            Some((an / (r * y0), sn / (r_prime * y0)))
        }
        None => None,
    };
    let report = ProportionalityReport {
        tpn: n,
        tps: s,
        r,
        r_prime,
        k_samples,
        riemann,
        epsilon,
    };
    Ok((report, curves))
}
