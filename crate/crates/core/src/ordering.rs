//! Pixel orderings, perturbation curves, and the ordering criteria built on
//! them: N-Ord (necessity), S-Ord (sufficiency), and AOPC.

use crate::attribution::{AttributionMap, PixelLayout};
use crate::error::{Error, Result};
use crate::network::{Model, ScoreMode};
use crate::par::{self, Parallelism};
use crate::tensor::Tensor;

/// Pixels sorted by descending attribution score, ties broken by ascending
/// pixel index, plus the strictly-positive prefix and its cumulative shares.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderedPixels {
    order: Vec<usize>,
    scores: Vec<f64>,
    positive_count: usize,
    cumulative_share: Vec<f64>,
    total_positive: f64,
}

impl OrderedPixels {
    /// Ranks raw scores; the positive prefix may be empty.
    pub fn from_scores(scores: &[f64]) -> Result<OrderedPixels> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("attribution scores".into()));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite").then(a.cmp(&b)));
        let sorted: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
        let positive_count = sorted.iter().take_while(|&&s| s > 0.0).count();
        let total_positive: f64 = sorted[..positive_count].iter().sum();
        let mut cumulative_share = Vec::with_capacity(positive_count + 1);
        cumulative_share.push(0.0);
        let mut acc = 0.0;
        for (i, s) in sorted[..positive_count].iter().enumerate() {
            acc += s;
            cumulative_share.push(if i + 1 == positive_count { 1.0 } else { acc / total_positive });
        }
        Ok(OrderedPixels {
            order,
            scores: sorted,
            positive_count,
            cumulative_share,
            total_positive,
        })
    }

    /// The full ordering π_A.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Scores aligned with [`OrderedPixels::order`].
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// π⁺_A: the strictly positive part of the ordering.
    pub fn positive_prefix(&self) -> &[usize] {
        &self.order[..self.positive_count]
    }

    /// M, the number of strictly positive scores.
    pub fn positive_count(&self) -> usize {
        self.positive_count
    }

    /// `cumulative_share()[m]` is the share of positive attribution held by the first `m` pixels of π⁺.
    pub fn cumulative_share(&self) -> &[f64] {
        &self.cumulative_share
    }

    /// S(x, A), the sum of positive scores.
    pub fn total_positive(&self) -> f64 {
        self.total_positive
    }

    pub fn pixel_count(&self) -> usize {
        self.order.len()
    }

    /// Prefix lengths of π⁺ at which a run of equal scores ends (always includes M).
    pub fn run_ends(&self) -> Vec<usize> {
        let m = self.positive_count;
        (1..=m)
            .filter(|&i| i == m || self.scores[i] != self.scores[i - 1])
            .collect()
    }
}

/// Orders a map's pixels; fails when no score is strictly positive, since
/// every criterion is undefined then.
pub fn order_pixels(map: &AttributionMap) -> Result<OrderedPixels> {
    let ordered = OrderedPixels::from_scores(map.scores.data())?;
    if ordered.positive_count == 0 {
        return Err(Error::EmptyPositiveSet);
    }
    Ok(ordered)
}

/// Source of the class score `y_c` for a (possibly perturbed) input.
pub trait ClassScore: Sync {
    fn score(&self, x: &Tensor) -> Result<f64>;
}

impl<F> ClassScore for F
where
    F: Fn(&Tensor) -> f64 + Sync,
{
    fn score(&self, x: &Tensor) -> Result<f64> {
        Ok(self(x))
    }
}

/// Class score read off a [`Model`].
#[derive(Clone, Copy, Debug)]
pub struct ModelScorer<'a> {
    pub model: &'a Model,
    pub class: usize,
    pub mode: ScoreMode,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model, class: usize, mode: ScoreMode) -> Result<Self> {
        model.check_class(class)?;
        Ok(ModelScorer { model, class, mode })
    }
}

impl ClassScore for ModelScorer<'_> {
    fn score(&self, x: &Tensor) -> Result<f64> {
        self.model.class_score(x, self.class, self.mode)
    }
}

/// Ablation removes pixels from `x`; construction adds them to the baseline image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Ablation,
    Construction,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Ablation => "ablation",
            Direction::Construction => "construction",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    /// Number of pixels perturbed.
    pub m: usize,
    /// Share of positive attribution those pixels carry.
    pub k: f64,
    /// Class score after the perturbation.
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationCurve {
    pub points: Vec<CurvePoint>,
    pub direction: Direction,
    pub baseline_value: f64,
    pub y0: f64,
    pub yb: f64,
    pub pixel_count: usize,
}

/// `x` with the listed pixels ablated (all channels set to `b`), or the
/// baseline image with the listed pixels restored from `x`.
pub fn perturb(x: &Tensor, pixels: &[usize], direction: Direction, b: f64) -> Result<Tensor> {
    let layout = PixelLayout::of(x.shape())?;
    let mut out = match direction {
        Direction::Ablation => x.clone(),
        Direction::Construction => x.map(|_| b),
    };
    for &p in pixels {
        if p >= layout.pixels {
            return Err(Error::Range(format!("pixel {p} out of range")));
        }
        for c in 0..layout.channels {
            let i = layout.index(c, p);
            out.data_mut()[i] = match direction {
                Direction::Ablation => b,
                Direction::Construction => x.data()[i],
            };
        }
    }
    Ok(out)
}

/// Class scores after perturbing each requested prefix of `pixels`.
pub fn eval_prefixes<S: ClassScore>(
    scorer: &S,
    x: &Tensor,
    pixels: &[usize],
    lengths: &[usize],
    direction: Direction,
    b: f64,
    mode: Parallelism,
) -> Result<Vec<f64>> {
    par::try_map(mode, lengths.len(), |i| {
        let len = lengths[i];
        if len > pixels.len() {
            return Err(Error::Range(format!("prefix {len} exceeds {} pixels", pixels.len())));
        }
        scorer.score(&perturb(x, &pixels[..len], direction, b)?)
    })
}

/// `0, chunk, 2·chunk, …` below `m`, then `m` itself.
pub fn prefix_lengths(m: usize, chunk: usize) -> Result<Vec<usize>> {
    if chunk == 0 {
        return Err(Error::Config("chunk must be at least 1".into()));
    }
    let mut lengths: Vec<usize> = (0..m).step_by(chunk).collect();
    lengths.push(m);
    Ok(lengths)
}

/// Smallest chunk keeping a curve over `m` pixels at no more than 257 points.
pub fn default_chunk(m: usize) -> usize {
    m.div_ceil(256).max(1)
}

fn baseline_scores<S: ClassScore>(scorer: &S, x: &Tensor, b: f64) -> Result<(f64, f64)> {
    Ok((scorer.score(x)?, scorer.score(&x.map(|_| b))?))
}

fn positive_curve<S: ClassScore>(
    scorer: &S,
    x: &Tensor,
    ordered: &OrderedPixels,
    b: f64,
    chunk: usize,
    direction: Direction,
    mode: Parallelism,
) -> Result<PerturbationCurve> {
    if ordered.positive_count == 0 {
        return Err(Error::EmptyPositiveSet);
    }
    let lengths = prefix_lengths(ordered.positive_count, chunk)?;
    let (y0, yb) = baseline_scores(scorer, x, b)?;
    let values = eval_prefixes(scorer, x, ordered.positive_prefix(), &lengths, direction, b, mode)?;
    let points = lengths
        .iter()
        .zip(values)
        .map(|(&m, r)| CurvePoint {
            m,
            k: ordered.cumulative_share[m],
            r,
        })
        .collect();
    Ok(PerturbationCurve {
        points,
        direction,
        baseline_value: b,
        y0,
        yb,
        pixel_count: ordered.pixel_count(),
    })
}

/// Scores while ablating growing prefixes of π⁺ from `x`.
pub fn ablation_curve<S: ClassScore>(
    scorer: &S,
    x: &Tensor,
    ordered: &OrderedPixels,
    b: f64,
    chunk: usize,
    mode: Parallelism,
) -> Result<PerturbationCurve> {
    positive_curve(scorer, x, ordered, b, chunk, Direction::Ablation, mode)
}

/// Scores while restoring growing prefixes of π⁺ onto the baseline image.
pub fn construction_curve<S: ClassScore>(
    scorer: &S,
    x: &Tensor,
    ordered: &OrderedPixels,
    b: f64,
    chunk: usize,
    mode: Parallelism,
) -> Result<PerturbationCurve> {
    positive_curve(scorer, x, ordered, b, chunk, Direction::Construction, mode)
}

/// Ablation over the full ordering π_A (non-positive pixels included) for
/// `m = 0..=steps`, as AOPC needs.
pub fn full_ablation_curve<S: ClassScore>(
    scorer: &S,
    x: &Tensor,
    ordered: &OrderedPixels,
    b: f64,
    steps: usize,
    mode: Parallelism,
) -> Result<PerturbationCurve> {
    if steps > ordered.pixel_count() {
        return Err(Error::Range(format!(
            "{steps} AOPC steps exceed {} pixels",
            ordered.pixel_count()
        )));
    }
    let lengths: Vec<usize> = (0..=steps).collect();
    let (y0, yb) = baseline_scores(scorer, x, b)?;
    let values = eval_prefixes(scorer, x, ordered.order(), &lengths, Direction::Ablation, b, mode)?;
    let last_share = ordered.positive_count;
    let points = lengths
        .iter()
        .zip(values)
        .map(|(&m, r)| CurvePoint {
            m,
            k: ordered.cumulative_share[m.min(last_share)],
            r,
        })
        .collect();
    Ok(PerturbationCurve {
        points,
        direction: Direction::Ablation,
        baseline_value: b,
        y0,
        yb,
        pixel_count: ordered.pixel_count(),
    })
}

fn expect_direction(curve: &PerturbationCurve, direction: Direction) -> Result<()> {
    if curve.direction != direction {
        return Err(Error::Config(format!(
            "expected a {} curve, got {}",
            direction.name(),
            curve.direction.name()
        )));
    }
    if curve.points.is_empty() {
        return Err(Error::EmptyPositiveSet);
    }
    Ok(())
}

/// N-Ord: mean of `max(R_m − y_b, 0)` over the ablation curve. Lower is better.
/// With `chunk > 1` this averages the sampled points only.
pub fn n_ord(curve: &PerturbationCurve) -> Result<f64> {
    expect_direction(curve, Direction::Ablation)?;
    let total: f64 = curve.points.iter().map(|p| (p.r - curve.yb).max(0.0)).sum();
    Ok(total / curve.points.len() as f64)
}

/// S-Ord: mean of `min(R'_m, R'_M) − y_0` over the construction curve. Higher is better.
pub fn s_ord(curve: &PerturbationCurve) -> Result<f64> {
    expect_direction(curve, Direction::Construction)?;
    let last = curve.points.last().expect("non-empty").r;
    let total: f64 = curve.points.iter().map(|p| p.r.min(last) - curve.y0).sum();
    Ok(total / curve.points.len() as f64)
}

/// AOPC over the first `steps` ablation steps: mean of `y_0 − R_m`, `m = 0..=steps`.
pub fn aopc(curve: &PerturbationCurve, steps: usize) -> Result<f64> {
    expect_direction(curve, Direction::Ablation)?;
    if steps > curve.pixel_count {
        return Err(Error::Range(format!("{steps} steps exceed {} pixels", curve.pixel_count)));
    }
    let covered = curve.points.iter().take(steps + 1).enumerate().all(|(i, p)| p.m == i);
    if curve.points.len() < steps + 1 || !covered {
        return Err(Error::Range(format!("curve does not cover steps 0..={steps} one pixel at a time")));
    }
    let total: f64 = curve.points[..=steps].iter().map(|p| curve.y0 - p.r).sum();
    Ok(total / (steps + 1) as f64)
}
