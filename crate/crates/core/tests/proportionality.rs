mod common;

use attrib_eval::attribution::{attribute, saliency, Method, MethodConfig};
use attrib_eval::network::ScoreMode;
use attrib_eval::ordering::{order_pixels, Direction, ModelScorer, OrderedPixels};
use attrib_eval::proportionality::*;
use attrib_eval::{synth, Error, Parallelism, Tensor};
use common::*;
use proptest::prelude::*;

const SEQ: Parallelism = Parallelism::Sequential;
const EPS: f64 = DEFAULT_EPSILON;

fn knots(c: &ShareCurve) -> Vec<(f64, f64)> {
    c.knots().iter().map(|p| (p.k, p.r)).collect()
}

/// Straight-line interpolation through `(k, R)` knots, written independently
/// of the library's evaluator.
fn interp(knots: &[(f64, f64)], k: f64) -> f64 {
    for w in knots.windows(2) {
        let ((k0, r0), (k1, r1)) = (w[0], w[1]);
        if k <= k1 {
            return r0 + (r1 - r0) * (k - k0) / (k1 - k0);
        }
    }
    knots.last().unwrap().1
}

fn midpoint_area(f: &ShareCurve, g: &ShareCurve, n: usize) -> f64 {
    let (a, b) = (knots(f), knots(g));
    let h = 1.0 / n as f64;
    (0..n).map(|i| {
        let k = (i as f64 + 0.5) * h;
        (interp(&a, k) - interp(&b, k)).abs() * h
    })
    .sum()
}

/// Midpoint sums on a fine grid inside every interval between consecutive
/// knots of either curve, so the only unresolved kinks are the crossings.
fn aligned_area(f: &ShareCurve, g: &ShareCurve, per_interval: usize) -> f64 {
    let (a, b) = (knots(f), knots(g));
    let mut xs: Vec<f64> = a.iter().chain(&b).map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut total = 0.0;
    for w in xs.windows(2) {
        let h = (w[1] - w[0]) / per_interval as f64;
        for i in 0..per_interval {
            let k = w[0] + (i as f64 + 0.5) * h;
            total += (interp(&a, k) - interp(&b, k)).abs() * h;
        }
    }
    total
}

fn assert_knots(c: &ShareCurve, want: &[(f64, f64)]) {
    let got = knots(c);
    assert_eq!(got.len(), want.len(), "{got:?}");
    for (g, w) in got.iter().zip(want) {
        assert!((g.0 - w.0).abs() < 1e-12 && (g.1 - w.1).abs() < 1e-12, "{got:?}");
    }
}

struct Four {
    af: ShareCurve,
    ar: ShareCurve,
    cf: ShareCurve,
    cr: ShareCurve,
}

fn four(scorer: &impl attrib_eval::ordering::ClassScore, x: &Tensor, o: &OrderedPixels) -> Four {
    let c = |d, or| share_curve(scorer, x, o, 0.0, d, or, 1, SEQ).unwrap();
    Four {
        af: c(Direction::Ablation, Orientation::Forward),
        ar: c(Direction::Ablation, Orientation::Reversed),
        cf: c(Direction::Construction, Orientation::Forward),
        cr: c(Direction::Construction, Orientation::Reversed),
    }
}

fn max_scorer() -> impl Fn(&Tensor) -> f64 + Sync {
    let m = synth::max_model().unwrap();
    move |x: &Tensor| m.class_score(x, 0, ScoreMode::Logit).unwrap()
}

#[test]
fn linear_share_curves() {
    let m = linear_21();
    let x = t1(&[1.0, 1.0]);
    let cfg = MethodConfig { score_mode: ScoreMode::Logit, ..MethodConfig::default() };
    let map = saliency(&m, &x, 0, &cfg).unwrap();
    let scorer = ModelScorer::new(&m, 0, ScoreMode::Logit).unwrap();
    let c = four(&scorer, &x, &order_pixels(&map).unwrap());
    assert_knots(&c.af, &[(0.0, 3.0), (2.0 / 3.0, 1.0), (1.0, 0.0)]);
    assert_knots(&c.ar, &[(0.0, 3.0), (1.0 / 3.0, 2.0), (1.0, 0.0)]);
    for i in 0..=20 {
        let k = i as f64 / 20.0;
        assert!(prop_k_necessity(&c.af, &c.ar, k).unwrap() < 1e-12);
        assert!(prop_k_sufficiency(&c.cf, &c.cr, k).unwrap() < 1e-12);
    }
    assert!(tpn(&c.af, &c.ar, 3.0, 0.0, EPS).unwrap() < 1e-9);
    assert!(tps(&c.cf, &c.cr, 3.0, EPS).unwrap() < 1e-9);
    assert!(matches!(prop_k_necessity(&c.af, &c.ar, 1.5), Err(Error::Range(_))));
    assert!(matches!(tpn(&c.af, &c.ar, 0.0, 0.0, EPS), Err(Error::DegenerateScore(_))));
}

#[test]
fn single_positive_pixel() {
    let s = max_scorer();
    let x = t1(&[0.4, 0.9, 0.2]);
    let o = OrderedPixels::from_scores(&[0.0, 0.7, -0.3]).unwrap();
    let c = four(&s, &x, &o);
    assert_eq!(c.af.knots().len(), 2);
    assert_eq!(c.cf.knots().iter().map(|p| p.k).collect::<Vec<_>>(), vec![0.0, 1.0]);
    assert_eq!(tps(&c.cf, &c.cr, 0.9, EPS).unwrap(), 0.0);
    assert_eq!(tpn(&c.af, &c.ar, 0.9, 0.0, EPS).unwrap(), 0.0);
}

#[test]
fn max_model_hand_values() {
    let s = max_scorer();
    let x = t1(&[1.0, 1.0, 1.0]);
    let maps = table1_maps();
    let a1 = four(&s, &x, &order_pixels(&maps[0].1).unwrap());
    assert_knots(&a1.af, &[(0.0, 1.0), (0.5, 1.0), (5.0 / 6.0, 1.0), (1.0, 0.0)]);
    assert!((prop_k_necessity(&a1.af, &a1.ar, 0.5).unwrap() - 1.0).abs() < 1e-12);
    assert!((tpn(&a1.af, &a1.ar, 1.0, 0.0, EPS).unwrap() - 7.0 / 12.0).abs() < 1e-12);

    // A₂: forward restores x₁ then x₃, reversed x₃ then x₁.
    let a2 = four(&s, &x, &order_pixels(&maps[1].1).unwrap());
    assert_knots(&a2.cf, &[(0.0, 0.0), (2.0 / 3.0, 1.0), (1.0, 1.0)]);
    assert!((prop_k_sufficiency(&a2.cf, &a2.cr, 0.5).unwrap() - 0.5).abs() < 1e-12);

    for c in [&a1, &a2] {
        for (f, g) in [(&c.af, &c.ar), (&c.cf, &c.cr)] {
            assert_eq!(prop_k_necessity_or_sufficiency(f, g, 0.0), 0.0);
        }
        assert_eq!(prop_k_sufficiency(&c.cf, &c.cr, 1.0).unwrap(), 0.0);
        let oracle = aligned_area(&c.af, &c.ar, 2_500);
        assert!((tpn(&c.af, &c.ar, 1.0, 0.0, EPS).unwrap() - oracle).abs() < 1e-9);
    }
}

fn prop_k_necessity_or_sufficiency(f: &ShareCurve, g: &ShareCurve, k: f64) -> f64 {
    match f.direction() {
        Direction::Ablation => prop_k_necessity(f, g, k).unwrap(),
        Direction::Construction => prop_k_sufficiency(f, g, k).unwrap(),
    }
}

#[test]
fn random_maps_on_desk_cnn() {
    let (model, _) = synth::trained_desk_cnn(5, 60).unwrap();
    for (i, sample) in synth::corpus(3, 21).unwrap().iter().enumerate() {
        let x = &sample.image;
        let class = model.forward(x).unwrap().predicted_class();
        let cfg = MethodConfig { rng_seed: i as u64, ..MethodConfig::default() };
        let map = attribute(Method::Random, &model, x, class, &cfg).unwrap();
        let scorer = ModelScorer::new(&model, class, ScoreMode::Softmax).unwrap();
        let o = order_pixels(&map).unwrap();
        let y0 = model.class_score(x, class, ScoreMode::Softmax).unwrap();
        let yb = model.class_score(&x.map(|_| 0.0), class, ScoreMode::Softmax).unwrap();
        let (report, curves) = proportionality(&scorer, x, &o, 0.0, y0, yb, 1, EPS, Some(1000), SEQ).unwrap();
        assert!(report.tps > 0.0);
        assert!((0.0..=1.0).contains(&report.r) && (0.0..=1.0).contains(&report.r_prime));
        let area = aligned_area(&curves.construction_fwd, &curves.construction_rev, 2_000);
        let oracle = area / (sufficiency_penalty(y0, curves.construction_fwd.last(), EPS) * y0);
        assert!((report.tps - oracle).abs() < 1e-9, "{} vs {oracle}", report.tps);
        let area = aligned_area(&curves.ablation_fwd, &curves.ablation_rev, 2_000);
        let oracle = area / (necessity_penalty(yb, curves.ablation_fwd.last(), EPS) * y0);
        assert!((report.tpn - oracle).abs() < 1e-9, "{} vs {oracle}", report.tpn);
    }
}

#[test]
fn exact_area_matches_dense_riemann() {
    let m = synth::random_mlp(16, &[12, 8], 3, 31).unwrap();
    let mut r = rng(31);
    for _ in 0..5 {
        let x = uniform(&[16], 0.0, 1.0, &mut r);
        let scores = uniform(&[16], -0.5, 1.0, &mut r);
        let Ok(o) = OrderedPixels::from_scores(scores.data()) else { continue };
        let scorer = ModelScorer::new(&m, 1, ScoreMode::Softmax).unwrap();
        let c = four(&scorer, &x, &o);
        for (f, g) in [(&c.af, &c.ar), (&c.cf, &c.cr)] {
            let exact = area_between(f, g);
            assert!((exact - midpoint_area(f, g, 100_000)).abs() < 1e-8);
            assert!((exact - riemann_area(f, g, 100_000).unwrap()).abs() < 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn endpoints_and_scale(xs in prop::collection::vec(0.0f64..1.0, 6), scores in prop::collection::vec(0.01f64..1.0, 6), scale in 0.1f64..50.0) {
        let m = synth::random_mlp(6, &[5], 2, 3).unwrap();
        let scorer = ModelScorer::new(&m, 0, ScoreMode::Softmax).unwrap();
        let x = t1(&xs);
        let o = OrderedPixels::from_scores(&scores).unwrap();
        let c = four(&scorer, &x, &o);
        prop_assert_eq!(prop_k_necessity(&c.af, &c.ar, 0.0).unwrap(), 0.0);
        prop_assert_eq!(prop_k_sufficiency(&c.cf, &c.cr, 0.0).unwrap(), 0.0);
        prop_assert_eq!(prop_k_sufficiency(&c.cf, &c.cr, 1.0).unwrap(), 0.0);

        let y0 = m.class_score(&x, 0, ScoreMode::Softmax).unwrap();
        let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
        let c2 = four(&scorer, &x, &OrderedPixels::from_scores(&scaled).unwrap());
        let (a, b) = (tpn(&c.af, &c.ar, y0, c.af.knots()[0].r.min(y0), EPS).unwrap(), tpn(&c2.af, &c2.ar, y0, c.af.knots()[0].r.min(y0), EPS).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        let (a, b) = (tps(&c.cf, &c.cr, y0, EPS).unwrap(), tps(&c2.cf, &c2.cr, y0, EPS).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}
