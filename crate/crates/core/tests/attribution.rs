#![allow(clippy::needless_range_loop)]

mod common;

use attrib_eval::attribution::{
    attribute, deeplift_rescale, gradcam, guided_backprop, integrated_gradient, lrp_alpha2beta1, random_attribution,
    saliency, smoothgrad, Method, MethodConfig,
};
use attrib_eval::network::{backward_input, BackwardRuleSet, Layer, Model, ScoreMode};
use attrib_eval::{synth, Error, Tensor};
use common::*;

fn logit() -> MethodConfig {
    MethodConfig {
        score_mode: ScoreMode::Logit,
        ..MethodConfig::default()
    }
}

fn dense(w: Vec<f64>, shape: [usize; 2], b: Vec<f64>) -> Layer {
    Layer::dense(Tensor::new(shape.to_vec(), w).unwrap(), Tensor::from_vec(b).unwrap()).unwrap()
}

#[test]
fn saliency_examples() {
    let m = linear_21();
    assert_eq!(saliency(&m, &t1(&[1.0, 1.0]), 0, &logit()).unwrap().scores.data(), &[2.0, 1.0]);
    let cnn = synth::desk_cnn(1).unwrap();
    let zero = Tensor::zeros(&[1, 12, 12]).unwrap();
    assert!(saliency(&cnn, &zero, 0, &MethodConfig::default()).unwrap().scores.data().iter().all(|&v| v == 0.0));
    // relu(x1 - 5) + x2: x1 is gated off at x1 = 1.
    let gate = Model::new(
        vec![dense(vec![1.0, 0.0, 0.0, 1.0], [2, 2], vec![-5.0, 0.0]), Layer::Relu, dense(vec![1.0, 1.0], [1, 2], vec![0.0])],
        vec![2],
    )
    .unwrap();
    let s = saliency(&gate, &t1(&[1.0, 2.0]), 0, &logit()).unwrap();
    assert_eq!(s.scores.data(), &[0.0, 2.0]);
}

#[test]
fn ig_examples() {
    let m = linear_21();
    for steps in [1, 7, 50] {
        let cfg = MethodConfig { ig_steps: steps, ..logit() };
        assert_eq!(integrated_gradient(&m, &t1(&[1.0, 1.0]), 0, &cfg).unwrap().scores.data(), &[2.0, 1.0]);
    }
    let cnn = synth::random_cnn(1, 4, 3, 2).unwrap();
    let cfg = MethodConfig { baseline_value: 0.3, ..MethodConfig::default() };
    let x = Tensor::full(&[1, 4, 4], 0.3).unwrap();
    let map = integrated_gradient(&cnn, &x, 1, &cfg).unwrap();
    assert!(map.scores.data().iter().all(|&v| v == 0.0));
    assert_eq!(map.metadata.get("ig_scheme").map(String::as_str), Some("left-riemann"));
}

#[test]
fn smoothgrad_examples() {
    let cnn = synth::random_cnn(1, 6, 3, 4).unwrap();
    let x = uniform(&[1, 6, 6], 0.0, 1.0, &mut rng(1));
    let quiet = MethodConfig { sg_noise_fraction: 0.0, ..MethodConfig::default() };
    assert_eq!(
        smoothgrad(&cnn, &x, 2, &quiet).unwrap().scores,
        saliency(&cnn, &x, 2, &quiet).unwrap().scores
    );
    let cfg = MethodConfig { rng_seed: 17, sg_samples: 20, ..MethodConfig::default() };
    assert_eq!(smoothgrad(&cnn, &x, 2, &cfg).unwrap(), smoothgrad(&cnn, &x, 2, &cfg).unwrap());
    let other = MethodConfig { rng_seed: 18, ..cfg.clone() };
    assert_ne!(smoothgrad(&cnn, &x, 2, &cfg).unwrap().scores, smoothgrad(&cnn, &x, 2, &other).unwrap().scores);
}

#[test]
fn smoothgrad_is_unbiased_on_a_smooth_region() {
    // For a ReLU network the mean noisy gradient converges to E[∇]; check the
    // sample mean against the per-sample spread.
    let m = synth::random_mlp(4, &[6], 2, 8).unwrap();
    let x = t1(&[0.2, 0.9, 0.4, 0.6]);
    let n = 4000;
    let cfg = MethodConfig { sg_samples: n, rng_seed: 3, parallelism: attrib_eval::Parallelism::Sequential, ..logit() };
    let sg = smoothgrad(&m, &x, 0, &cfg).unwrap();
    let cfg2 = MethodConfig { rng_seed: 4, ..cfg.clone() };
    let sg2 = smoothgrad(&m, &x, 0, &cfg2).unwrap();
    for (a, b) in sg.scores.data().iter().zip(sg2.scores.data()) {
        // Two independent estimates of the same expectation; gradients are
        // bounded by the weight norms, so this is a loose 3-sigma band.
        assert!((a - b).abs() < 0.5, "{a} vs {b}");
    }
}

#[test]
fn guided_backprop_examples() {
    let m = linear_21();
    let x = t1(&[0.5, -2.0]);
    assert_eq!(guided_backprop(&m, &x, 0, &logit()).unwrap().scores, saliency(&m, &x, 0, &logit()).unwrap().scores);
    // y = -relu(x): upstream gradient at the ReLU is negative.
    let neg = Model::new(vec![dense(vec![1.0], [1, 1], vec![0.0]), Layer::Relu, dense(vec![-1.0], [1, 1], vec![0.0])], vec![1]).unwrap();
    assert_eq!(guided_backprop(&neg, &t1(&[2.0]), 0, &logit()).unwrap().scores.data(), &[0.0]);
}

#[test]
fn guided_backprop_matches_path_enumeration() {
    let mut r = rng(9);
    for _ in 0..20 {
        let w1 = uniform(&[4, 3], -1.0, 1.0, &mut r);
        let b1 = uniform(&[4], -0.3, 0.3, &mut r);
        let w2 = uniform(&[2, 4], -1.0, 1.0, &mut r);
        let m = Model::new(
            vec![
                Layer::dense(w1.clone(), b1.clone()).unwrap(),
                Layer::Relu,
                Layer::dense(w2.clone(), Tensor::zeros(&[2]).unwrap()).unwrap(),
            ],
            vec![3],
        )
        .unwrap();
        let x = uniform(&[3], -1.0, 1.0, &mut r);
        let z: Vec<f64> = (0..4)
            .map(|h| (0..3).map(|i| w1.data()[h * 3 + i] * x.data()[i]).sum::<f64>() + b1.data()[h])
            .collect();
        for c in 0..2 {
            let got = guided_backprop(&m, &x, c, &logit()).unwrap();
            for i in 0..3 {
                let mut path_sum = 0.0;
                for h in 0..4 {
                    let up = w2.data()[c * 4 + h];
                    if z[h] > 0.0 && up > 0.0 {
                        path_sum += up * w1.data()[h * 3 + i];
                    }
                }
                assert!((got.scores.data()[i] - path_sum * x.data()[i]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn lrp_examples() {
    let m = Model::new(vec![dense(vec![1.0, 2.0, 3.0], [1, 3], vec![0.0])], vec![3]).unwrap();
    let x = t1(&[1.0, 1.0, 2.0]);
    let r = lrp_alpha2beta1(&m, &x, 0, &logit()).unwrap();
    // Positive inputs and weights: relevance is each z_i, summing to y = 9.
    for (got, z) in r.scores.data().iter().zip([1.0, 2.0, 6.0]) {
        assert!((got - z).abs() < 1e-9);
    }
    let lin = synth::random_linear(6, 2, 5).unwrap();
    let x = uniform(&[6], -1.0, 1.0, &mut rng(2));
    let r = lrp_alpha2beta1(&lin, &x, 1, &logit()).unwrap();
    let y = lin.class_score(&x, 1, ScoreMode::Logit).unwrap();
    let Layer::Dense { weight, .. } = &lin.layers()[0] else { unreachable!() };
    let wx: Vec<f64> = (0..6).map(|i| weight.data()[6 + i] * x.data()[i]).collect();
    let s: f64 = wx.iter().sum();
    for i in 0..6 {
        assert!((r.scores.data()[i] - wx[i] * y / s).abs() < 1e-6 * y.abs().max(1.0));
    }
    assert!((r.scores.sum() - y).abs() < 1e-6);
    let zero = lrp_alpha2beta1(&m, &t1(&[0.0; 3]), 0, &logit()).unwrap();
    assert!(zero.scores.data().iter().all(|&v| v == 0.0));
}

#[test]
fn deeplift_examples() {
    let lin = synth::random_linear(5, 3, 6).unwrap();
    let x = uniform(&[5], -1.0, 1.0, &mut rng(3));
    let cfg = MethodConfig { baseline_value: 0.2, ..logit() };
    let dl = deeplift_rescale(&lin, &x, 2, &cfg).unwrap();
    let ig = integrated_gradient(&lin, &x, 2, &cfg).unwrap();
    for (a, b) in dl.scores.data().iter().zip(ig.scores.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let same = Tensor::full(&[5], 0.2).unwrap();
    assert!(deeplift_rescale(&lin, &same, 0, &cfg).unwrap().scores.data().iter().all(|&v| v == 0.0));

    // One ReLU, x and baseline on the active piece.
    let m = Model::new(
        vec![dense(vec![1.0, 2.0, -1.0, 0.5], [2, 2], vec![1.0, 2.0]), Layer::Relu, dense(vec![1.5, -0.7], [1, 2], vec![0.0])],
        vec![2],
    )
    .unwrap();
    let x = t1(&[0.4, 0.3]);
    let cfg = MethodConfig { baseline_value: 0.1, ..logit() };
    let trace = m.forward(&x).unwrap();
    let g = backward_input(&m, &trace, 0, ScoreMode::Logit, &BackwardRuleSet::exact()).unwrap();
    let dl = deeplift_rescale(&m, &x, 0, &cfg).unwrap();
    for i in 0..2 {
        assert!((dl.scores.data()[i] - g.data()[i] * (x.data()[i] - 0.1)).abs() < 1e-12);
    }
}

#[test]
fn gradcam_examples() {
    // 1×1 identity convolution read by an all-ones (or all-minus-ones) dense layer.
    let build = |sign: f64| {
        Model::new(
            vec![
                Layer::conv2d(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(), t1(&[0.0]), 1, 0).unwrap(),
                Layer::Flatten,
                dense(vec![sign; 9], [1, 9], vec![0.0]),
            ],
            vec![1, 3, 3],
        )
        .unwrap()
    };
    let x = Tensor::new(vec![1, 3, 3], vec![0.5, -1.0, 2.0, 0.0, 3.0, -0.2, 1.0, 1.0, -4.0]).unwrap();
    let map = gradcam(&build(1.0), &x, 0, &logit()).unwrap();
    assert_eq!(map.scores.shape(), &[3, 3]);
    assert_eq!(map.scores.data(), &[0.5, 0.0, 2.0, 0.0, 3.0, 0.0, 1.0, 1.0, 0.0]);
    let x = x.map(f64::abs);
    assert!(gradcam(&build(-1.0), &x, 0, &logit()).unwrap().scores.data().iter().all(|&v| v == 0.0));
    assert!(matches!(gradcam(&linear_21(), &t1(&[1.0, 1.0]), 0, &logit()), Err(Error::NoConvLayer)));
}

#[test]
fn random_baseline() {
    let x = Tensor::zeros(&[3, 32, 32]).unwrap();
    let a = random_attribution(&x, 1).unwrap();
    assert_eq!(a, random_attribution(&x, 1).unwrap());
    assert_ne!(a.scores, random_attribution(&x, 2).unwrap().scores);
    assert_eq!(a.scores.shape(), &[32, 32]);
    assert!(a.scores.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn channels_are_summed() {
    let m = synth::random_cnn(3, 4, 2, 12).unwrap();
    let x = uniform(&[3, 4, 4], 0.0, 1.0, &mut rng(4));
    let map = saliency(&m, &x, 1, &MethodConfig::default()).unwrap();
    let g = backward_input(&m, &m.forward(&x).unwrap(), 1, ScoreMode::Softmax, &BackwardRuleSet::exact()).unwrap();
    assert_eq!(map.scores.shape(), &[4, 4]);
    for p in 0..16 {
        let want: f64 = (0..3).map(|c| g.data()[c * 16 + p] * x.data()[c * 16 + p]).sum();
        assert!((map.scores.data()[p] - want).abs() < 1e-15);
    }
}

#[test]
fn every_method_is_deterministic() {
    let m = synth::desk_cnn(2).unwrap();
    let x = synth::corpus(1, 2).unwrap().remove(0).image;
    let cfg = MethodConfig { sg_samples: 5, ig_steps: 5, rng_seed: 9, ..MethodConfig::default() };
    for method in Method::ALL {
        let a = attribute(method, &m, &x, 1, &cfg).unwrap();
        let b = attribute(method, &m, &x, 1, &cfg).unwrap();
        assert_eq!(a, b, "{method}");
        assert_eq!(a.scores.shape(), &[12, 12]);
        assert!(a.scores.is_finite());
    }
}

#[test]
fn ig_completeness_improves_with_steps() {
    for seed in 0..4 {
        let m = synth::random_cnn(1, 6, 3, 40 + seed).unwrap();
        let x = uniform(&[1, 6, 6], 0.0, 1.0, &mut rng(seed));
        let class = m.forward(&x).unwrap().predicted_class();
        let delta = m.class_score(&x, class, ScoreMode::Softmax).unwrap()
            - m.class_score(&Tensor::zeros(&[1, 6, 6]).unwrap(), class, ScoreMode::Softmax).unwrap();
        let errs: Vec<f64> = [10, 40, 160, 640]
            .iter()
            .map(|&steps| {
                let cfg = MethodConfig { ig_steps: steps, ..MethodConfig::default() };
                (integrated_gradient(&m, &x, class, &cfg).unwrap().scores.sum() - delta).abs()
            })
            .collect();
        // ReLU kinks make single doublings noisy; quadrupling is reliably better.
        for w in errs.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: {errs:?}");
        }
    }
}
