mod common;

use attrib_eval::network::{
    backward_input, backward_to_layer_output, load_model, save_model, BackwardRuleSet, Layer, Model, ScoreMode,
};
use attrib_eval::{synth, Error, Tensor};
use common::*;

fn write_manifest(dir: &std::path::Path, json: &str, blob: &[f32]) -> std::path::PathBuf {
    let bytes: Vec<u8> = blob.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(dir.join("m.bin"), bytes).unwrap();
    let path = dir.join("m.json");
    std::fs::write(&path, json).unwrap();
    path
}

#[test]
fn smallest_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(
        dir.path(),
        r#"{"version": 1, "input_shape": [3], "class_count": 1, "weights": "m.bin",
            "layers": [{"kind": "dense", "weight_shape": [1, 3], "weight_offset": 0, "bias_offset": 12}]}"#,
        &[2.0, 1.0, 0.0, 0.0],
    );
    let m = load_model(&path).unwrap();
    assert_eq!(m.layers().len(), 1);
    assert_eq!(m.class_score(&t1(&[1.0, 1.0, 1.0]), 0, ScoreMode::Logit).unwrap(), 3.0);
}

#[test]
fn blob_size_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(
        dir.path(),
        r#"{"version": 1, "input_shape": [4], "class_count": 2, "weights": "m.bin",
            "layers": [{"kind": "dense", "weight_shape": [2, 4], "weight_offset": 0, "bias_offset": 32}]}"#,
        &[0.5; 7],
    );
    assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))));
}

#[test]
fn unknown_version_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(
        dir.path(),
        r#"{"version": 2, "input_shape": [3], "class_count": 1, "weights": "m.bin", "layers": []}"#,
        &[],
    );
    assert!(matches!(load_model(&path), Err(Error::Version { .. })));
    assert!(matches!(load_model(dir.path().join("missing.json")), Err(Error::Io { .. })));
}

#[test]
fn non_finite_weight_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(
        dir.path(),
        r#"{"version": 1, "input_shape": [1], "class_count": 1, "weights": "m.bin",
            "layers": [{"kind": "dense", "weight_shape": [1, 1], "weight_offset": 0, "bias_offset": 4}]}"#,
        &[f32::NAN, 0.0],
    );
    assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))));
}

fn zero_bias_cnn() -> Model {
    let mut r = rng(3);
    Model::new(
        vec![
            Layer::conv2d(uniform(&[8, 1, 3, 3], -1.0, 1.0, &mut r), Tensor::zeros(&[8]).unwrap(), 1, 1).unwrap(),
            Layer::Relu,
            Layer::MaxPool2d { window: 2, stride: 2 },
            Layer::Flatten,
            Layer::dense(uniform(&[4, 8 * 3 * 3], -1.0, 1.0, &mut r), Tensor::zeros(&[4]).unwrap()).unwrap(),
            Layer::Softmax,
        ],
        vec![1, 6, 6],
    )
    .unwrap()
}

#[test]
fn zero_bias_cnn_is_uniform_on_zeros_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cnn.json");
    save_model(&zero_bias_cnn(), &path).unwrap();
    let m = load_model(&path).unwrap();
    let y = m.forward(&Tensor::zeros(&[1, 6, 6]).unwrap()).unwrap();
    assert_eq!(y.output().data(), &[0.25; 4]);

    let blob = std::fs::read(dir.path().join("cnn.bin")).unwrap();
    let again = dir.path().join("again.json");
    save_model(&m, &again).unwrap();
    assert_eq!(std::fs::read(dir.path().join("again.bin")).unwrap(), blob);
    assert_eq!(load_model(&again).unwrap(), m);
}

#[test]
fn dense_round_trip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lin.json");
    let mut m = synth::random_linear(5, 3, 11).unwrap();
    save_model(&m, &path).unwrap();
    m = load_model(&path).unwrap();
    save_model(&m, &path).unwrap();
    let back = load_model(&path).unwrap();
    let mut r = rng(0);
    for _ in 0..10 {
        let x = uniform(&[5], -2.0, 2.0, &mut r);
        assert_eq!(m.forward(&x).unwrap().output(), back.forward(&x).unwrap().output());
    }
}

#[test]
fn forward_contracts() {
    assert_eq!(linear_210().class_score(&t1(&[1.0, 1.0, 1.0]), 0, ScoreMode::Logit).unwrap(), 3.0);
    assert!(linear_210().forward(&t1(&[f64::NAN, 0.0, 0.0])).is_err());
    assert!(matches!(linear_210().forward(&t1(&[1.0, 0.0])), Err(Error::Shape(_))));
    let soft = Model::new(
        vec![Layer::dense(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(), t1(&[0.0, 0.0])).unwrap(), Layer::Softmax],
        vec![2],
    )
    .unwrap();
    assert_eq!(soft.forward(&t1(&[0.0, 0.0])).unwrap().output().data(), &[0.5, 0.5]);

    let m = synth::random_mlp(6, &[5, 4], 3, 2).unwrap();
    let mut r = rng(1);
    for _ in 0..20 {
        let y = m.forward(&uniform(&[6], -3.0, 3.0, &mut r)).unwrap();
        assert!((y.output().sum() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn trace_replays_bit_exactly() {
    let m = synth::random_cnn(2, 6, 3, 9).unwrap();
    let x = uniform(&[2, 6, 6], 0.0, 1.0, &mut rng(2));
    let trace = m.forward(&x).unwrap();
    assert_eq!(trace.len(), m.layers().len());
    for (layer, rec) in m.layers().iter().zip(trace.records()) {
        assert_eq!(&layer.forward(&rec.input).unwrap().0, &rec.output);
    }
}

#[test]
fn invalid_models_rejected() {
    let d = |o, i| Layer::dense(Tensor::zeros(&[o, i]).unwrap(), Tensor::zeros(&[o]).unwrap()).unwrap();
    assert!(Model::new(vec![d(2, 3), Layer::Softmax, d(2, 2)], vec![3]).is_err());
    assert!(Model::new(vec![d(2, 3), d(2, 4)], vec![3]).is_err());
    assert!(Model::new(vec![d(2, 3), Layer::Relu], vec![3]).is_err());
}

#[test]
fn linear_gradient_is_constant() {
    let m = linear_210();
    let mut r = rng(4);
    for _ in 0..5 {
        let x = uniform(&[3], -5.0, 5.0, &mut r);
        let g = backward_input(&m, &m.forward(&x).unwrap(), 0, ScoreMode::Logit, &BackwardRuleSet::exact()).unwrap();
        assert_eq!(g.data(), &[2.0, 1.0, 0.0]);
    }
}

#[test]
fn inactive_relu_blocks_gradient() {
    let one = || Layer::dense(Tensor::new(vec![1, 1], vec![1.0]).unwrap(), t1(&[0.0])).unwrap();
    let m = Model::new(vec![one(), Layer::Relu, one()], vec![1]).unwrap();
    let trace = m.forward(&t1(&[-1.0])).unwrap();
    for rules in [BackwardRuleSet::exact(), BackwardRuleSet::guided()] {
        assert_eq!(backward_input(&m, &trace, 0, ScoreMode::Logit, &rules).unwrap().data(), &[0.0]);
    }
}

#[test]
fn exact_gradient_matches_finite_differences() {
    for seed in 0..6 {
        let (m, lo, hi) = if seed % 2 == 0 {
            (synth::random_mlp(5, &[6, 4], 3, seed).unwrap(), -2.0, 2.0)
        } else {
            (synth::random_cnn(1, 4, 3, seed).unwrap(), 0.0, 1.0)
        };
        let mut r = rng(seed + 100);
        let x = kink_free_input(&m, lo, hi, &mut r);
        for mode in [ScoreMode::Softmax, ScoreMode::Logit] {
            for class in 0..3 {
                let g = backward_input(&m, &m.forward(&x).unwrap(), class, mode, &BackwardRuleSet::exact()).unwrap();
                let fd = fd_gradient(&m, &x, class, mode, 1e-5);
                assert!(max_rel_err(g.data(), &fd) < 1e-4, "seed {seed} {mode:?} class {class}");
            }
        }
    }
}

#[test]
fn guided_equals_exact_when_everything_is_positive() {
    let mut r = rng(5);
    let pos = |o: usize, i: usize, r: &mut rand_chacha::ChaCha8Rng| {
        Layer::dense(uniform(&[o, i], 0.1, 1.0, r), uniform(&[o], 0.0, 0.1, r)).unwrap()
    };
    let m = Model::new(vec![pos(4, 3, &mut r), Layer::Relu, pos(3, 4, &mut r), Layer::Relu, pos(2, 3, &mut r)], vec![3]).unwrap();
    let x = uniform(&[3], 0.1, 1.0, &mut r);
    let trace = m.forward(&x).unwrap();
    let exact = backward_input(&m, &trace, 1, ScoreMode::Logit, &BackwardRuleSet::exact()).unwrap();
    let guided = backward_input(&m, &trace, 1, ScoreMode::Logit, &BackwardRuleSet::guided()).unwrap();
    assert_eq!(exact, guided);
}

#[test]
fn lrp_conserves_relevance_per_layer() {
    let m = synth::random_cnn(1, 6, 3, 21).unwrap();
    let rules = BackwardRuleSet::lrp_alpha2beta1();
    let mut r = rng(6);
    for _ in 0..5 {
        let x = uniform(&[1, 6, 6], 0.0, 1.0, &mut r);
        let trace = m.forward(&x).unwrap();
        let class = trace.predicted_class();
        let total = trace.class_score(class, ScoreMode::Softmax);
        let depth = m.layers().len() - 1;
        let mut sums = Vec::new();
        for layer in 0..depth {
            sums.push(backward_to_layer_output(&m, &trace, class, ScoreMode::Softmax, &rules, layer).unwrap().sum());
        }
        sums.push(total);
        let input = backward_input(&m, &trace, class, ScoreMode::Softmax, &rules).unwrap().sum();
        for (i, layer) in m.layers()[..depth].iter().enumerate() {
            if matches!(layer, Layer::Conv2d { .. } | Layer::Dense { .. }) {
                let into = if i == 0 { input } else { sums[i - 1] };
                let out = sums[i];
                assert!((into - out).abs() <= 1e-6 * out.abs().max(1e-12), "layer {i}: {into} vs {out}");
            }
        }
        assert!((input - total).abs() <= 1e-6 * total);
    }
}

#[test]
fn deeplift_summation_to_delta() {
    let models = [
        synth::random_mlp(5, &[7, 4], 3, 31).unwrap(),
        synth::random_cnn(2, 6, 4, 32).unwrap(),
        synth::desk_cnn(33).unwrap(),
    ];
    let mut r = rng(7);
    for m in &models {
        let baseline = Tensor::zeros(m.input_shape()).unwrap();
        let reference = m.forward(&baseline).unwrap();
        for _ in 0..4 {
            let x = uniform(m.input_shape(), 0.0, 1.0, &mut r);
            let trace = m.forward(&x).unwrap();
            for mode in [ScoreMode::Softmax, ScoreMode::Logit] {
                let class = trace.predicted_class();
                let mult = backward_input(m, &trace, class, mode, &BackwardRuleSet::deeplift_rescale(&reference)).unwrap();
                let total: f64 = mult.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
                let delta = trace.class_score(class, mode) - reference.class_score(class, mode);
                assert!((total - delta).abs() <= 1e-6 * delta.abs().max(1.0), "{mode:?}: {total} vs {delta}");
            }
        }
    }
}
