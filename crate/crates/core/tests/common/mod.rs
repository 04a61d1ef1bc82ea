#![allow(dead_code)]

use attrib_eval::attribution::AttributionMap;
use attrib_eval::network::{Layer, Model, ScoreMode};
use attrib_eval::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn t1(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.to_vec()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Dense 3→1 with weights (2, 1, 0) and no bias.
pub fn linear_210() -> Model {
    Model::new(vec![Layer::dense(Tensor::new(vec![1, 3], vec![2.0, 1.0, 0.0]).unwrap(), t1(&[0.0])).unwrap()], vec![3]).unwrap()
}

/// Dense 2→1 computing 2x₁ + x₂.
pub fn linear_21() -> Model {
    Model::new(vec![Layer::dense(Tensor::new(vec![1, 2], vec![2.0, 1.0]).unwrap(), t1(&[0.0])).unwrap()], vec![2]).unwrap()
}

/// The three hand-written maps for the max model on x = (1, 1, 1).
pub fn table1_maps() -> Vec<(&'static str, AttributionMap)> {
    [("A1", [1.0 / 6.0, 1.0 / 3.0, 1.0 / 2.0]), ("A2", [2.0 / 3.0, 0.0, 1.0 / 3.0]), ("A3", [2.0 / 3.0, 1.0 / 3.0, 0.0])]
        .into_iter()
        .map(|(name, s)| (name, AttributionMap::from_scores(name, t1(&s), 0, 0.0).unwrap()))
        .collect()
}

/// Central finite differences of the class score, step `h`.
pub fn fd_gradient(model: &Model, x: &Tensor, class: usize, mode: ScoreMode, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            (model.class_score(&plus, class, mode).unwrap() - model.class_score(&minus, class, mode).unwrap()) / (2.0 * h)
        })
        .collect()
}

/// max |a − b| over max |b|.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// True when every ReLU input is at least `margin` from 0 and every max-pool
/// window's nonzero winner leads the runner-up by `margin`, so the network is smooth
/// in a neighbourhood of `x`.
pub fn kink_free(model: &Model, x: &Tensor, margin: f64) -> bool {
    let trace = model.forward(x).unwrap();
    for (layer, rec) in model.layers().iter().zip(trace.records()) {
        match layer {
            Layer::Relu => {
                if rec.input.data().iter().any(|z| z.abs() <= margin) {
                    return false;
                }
            }
            Layer::MaxPool2d { window, stride } => {
                let s = rec.input.shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut vals: Vec<f64> = Vec::new();
                            for ky in 0..*window {
                                for kx in 0..*window {
                                    vals.push(rec.input.data()[(ch * h + oy * stride + ky) * w + ox * stride + kx]);
                                }
                            }
                            vals.sort_by(|a, b| b.total_cmp(a));
                            // An all-zero window behind a ReLU is locally constant.
                            if vals[0] != 0.0 && vals[0] - vals[1] <= margin {
                                return false;
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    true
}

/// A kink-free input drawn uniformly from [lo, hi), resampling as needed.
pub fn kink_free_input(model: &Model, lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    for _ in 0..10_000 {
        let x = uniform(model.input_shape(), lo, hi, rng);
        if kink_free(model, &x, 1e-3) {
            return x;
        }
    }
    panic!("no kink-free input found");
}

/// Serves fixed attribution maps by method name, ignoring the model.
pub struct FixedMaps(pub Vec<(&'static str, AttributionMap)>);

impl attrib_eval::harness::AttributionProvider for FixedMaps {
    fn supports(&self, method: &str) -> bool {
        self.0.iter().any(|(n, _)| *n == method)
    }

    fn attribute(
        &self,
        method: &str,
        _image_id: &str,
        _model: &Model,
        x: &Tensor,
        class: usize,
        _cfg: &attrib_eval::attribution::MethodConfig,
    ) -> attrib_eval::Result<AttributionMap> {
        let (_, map) = self.0.iter().find(|(n, _)| *n == method).unwrap();
        let scores = Tensor::new(x.shape()[1..].to_vec(), map.scores.data().to_vec())?;
        AttributionMap::from_scores(method, scores, class, 0.0)
    }
}

/// max(x₁, x₂) on a 1×1×3 image, as a model file plus one all-ones image.
/// Returns `(model_path, image_dir)`.
pub fn max_model_files(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let inner = attrib_eval::synth::max_model().unwrap();
    let mut layers = vec![Layer::Flatten];
    layers.extend(inner.layers().iter().cloned());
    let model = Model::new(layers, vec![1, 1, 3]).unwrap();
    let model_path = dir.join("max.json");
    attrib_eval::network::save_model(&model, &model_path).unwrap();
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    attrib_eval::harness::write_raw_tensor(images.join("x.rawt"), &Tensor::full(&[1, 1, 3], 1.0).unwrap()).unwrap();
    (model_path, images)
}

/// Run config for the max-model fixture: class 0, logit scores, b = 0, chunk 1.
pub fn max_model_config(dir: &std::path::Path) -> attrib_eval::harness::RunConfig {
    let (model, images) = max_model_files(dir);
    let mut cfg = attrib_eval::harness::RunConfig::new(model, images, dir.join("out"));
    cfg.methods = vec!["A1".into(), "A2".into(), "A3".into()];
    cfg.class_mode = attrib_eval::harness::ClassMode::Fixed(0);
    cfg.settings.score_mode = ScoreMode::Logit;
    cfg.settings.chunk = Some(1);
    cfg
}

/// Writes the desk CNN (untrained, seeded) and `count` corpus images as PGM.
pub fn desk_files(dir: &std::path::Path, count: usize, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
    let model_path = dir.join("desk.json");
    attrib_eval::network::save_model(&attrib_eval::synth::desk_cnn(seed).unwrap(), &model_path).unwrap();
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    for s in attrib_eval::synth::corpus(count, seed).unwrap() {
        attrib_eval::harness::write_pnm(images.join(format!("{}.pgm", s.id)), &s.image).unwrap();
    }
    (model_path, images)
}
