//! Small synthetic fixtures: a three-class bar/box image corpus, a compact
//! CNN with an SGD trainer for it, and random or hand-built models for tests
//! and benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::network::{propagate, BackwardRuleSet, Layer, Model};
use crate::tensor::{conv2d_kernel_grad, Tensor};

/// Side length of corpus images.
pub const IMAGE_SIZE: usize = 12;
/// Classes: horizontal bar, vertical bar, hollow box.
pub const CLASS_NAMES: [&str; 3] = ["hbar", "vbar", "box"];

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub label: usize,
}

/// One 1×12×12 image of class `label` with faint background noise.
pub fn draw_shape(label: usize, rng: &mut impl Rng) -> Result<Tensor> {
    if label >= CLASS_NAMES.len() {
        return Err(Error::Range(format!("class {label} out of range")));
    }
    let n = IMAGE_SIZE;
    let mut img = vec![0.0; n * n];
    for v in img.iter_mut() {
        *v = rng.random_range(0.0..0.08);
    }
    let ink = rng.random_range(0.6..1.0);
    let mut set = |y: usize, x: usize| img[y * n + x] = ink;
    match label {
        0 | 1 => {
            let len = rng.random_range(5..=9);
            let thick = rng.random_range(1..=2);
            let along = rng.random_range(0..=n - len);
            let across = rng.random_range(1..=n - 1 - thick);
            for a in along..along + len {
                for t in across..across + thick {
                    if label == 0 {
                        set(t, a);
                    } else {
                        set(a, t);
                    }
                }
            }
        }
        _ => {
            let side = rng.random_range(4..=7);
            let top = rng.random_range(0..=n - side);
            let left = rng.random_range(0..=n - side);
            for i in 0..side {
                set(top, left + i);
                set(top + side - 1, left + i);
                set(top + i, left);
                set(top + i, left + side - 1);
            }
        }
    }
    Tensor::new(vec![1, n, n], img)
}

/// `count` samples cycling through the classes, ids `img0000`, `img0001`, ….
pub fn corpus(count: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let label = i % CLASS_NAMES.len();
            Ok(Sample {
                id: format!("img{i:04}"),
                image: draw_shape(label, &mut rng)?,
                label,
            })
        })
        .collect()
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| dist.sample(rng)).collect())
}

fn he_dense(out: usize, inp: usize, rng: &mut impl Rng) -> Result<Layer> {
    Layer::dense(
        normal_tensor(&[out, inp], (2.0 / inp as f64).sqrt(), rng)?,
        normal_tensor(&[out], 0.05, rng)?,
    )
}

fn he_conv(out: usize, inp: usize, k: usize, padding: usize, rng: &mut impl Rng) -> Result<Layer> {
    Layer::conv2d(
        normal_tensor(&[out, inp, k, k], (2.0 / (inp * k * k) as f64).sqrt(), rng)?,
        normal_tensor(&[out], 0.05, rng)?,
        1,
        padding,
    )
}

/// Untrained corpus classifier: conv 3×3 (6 maps) → ReLU → 2×2 max-pool →
/// dense 216→16 → ReLU → dense 16→3 → softmax; 3,583 parameters.
pub fn desk_cnn(seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = 6 * (IMAGE_SIZE / 2) * (IMAGE_SIZE / 2);
    Model::new(
        vec![
            he_conv(6, 1, 3, 1, &mut rng)?,
            Layer::Relu,
            Layer::MaxPool2d { window: 2, stride: 2 },
            Layer::Flatten,
            he_dense(16, flat, &mut rng)?,
            Layer::Relu,
            he_dense(CLASS_NAMES.len(), 16, &mut rng)?,
            Layer::Softmax,
        ],
        vec![1, IMAGE_SIZE, IMAGE_SIZE],
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStats {
    pub final_loss: f64,
    pub accuracy: f64,
}

/// Cross-entropy gradients of every parameter tensor, in `parameters()` order.
fn parameter_gradients(model: &Model, x: &Tensor, label: usize) -> Result<(f64, Vec<Option<Vec<Tensor>>>)> {
    let trace = model.forward(x)?;
    let p = crate::network::softmax(trace.logits().data());
    let loss = -p[label].max(1e-300).ln();
    let mut seed = p.clone();
    seed[label] -= 1.0;
    let seed = Tensor::new(trace.logits().shape().to_vec(), seed)?;
    let mut grads: Vec<Option<Vec<Tensor>>> = vec![None; model.layers().len()];
    let mut failure = None;
    propagate(model, &trace, seed, &BackwardRuleSet::exact(), 0, |i, signal| {
        let input = &trace.records()[i].input;
        let g = match &model.layers()[i] {
            Layer::Dense { weight, .. } => {
                let (out, inp) = (weight.shape()[0], weight.shape()[1]);
                let mut w = vec![0.0; out * inp];
                for o in 0..out {
                    for j in 0..inp {
                        w[o * inp + j] = signal.data()[o] * input.data()[j];
                    }
                }
                Tensor::new(vec![out, inp], w).map(|w| vec![w, signal.clone()])
            }
            Layer::Conv2d { kernels, stride, padding, .. } => {
                conv2d_kernel_grad(input, signal, kernels.shape(), *stride, *padding).and_then(|k| {
                    let (c, plane) = (signal.shape()[0], signal.len() / signal.shape()[0]);
                    let b = (0..c).map(|o| signal.data()[o * plane..(o + 1) * plane].iter().sum()).collect();
                    Ok(vec![k, Tensor::new(vec![c], b)?])
                })
            }
            _ => return,
        };
        match g {
            Ok(g) => grads[i] = Some(g),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((loss, grads))
}

/// Plain per-sample SGD on softmax cross-entropy. Weights are rounded to f32
/// afterwards so a saved model reloads bit-identically.
pub fn train(model: &mut Model, data: &[(Tensor, usize)], cfg: &TrainConfig) -> Result<TrainStats> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut final_loss = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.learning_rate / (1.0 + epoch as f64 * 0.1);
        let mut total = 0.0;
        for &i in &order {
            let (x, label) = &data[i];
            model.check_class(*label)?;
            let (loss, grads) = parameter_gradients(model, x, *label)?;
            total += loss;
            for (layer, g) in model.layers_mut().iter_mut().zip(grads) {
                let Some(g) = g else { continue };
                for (param, grad) in layer.parameters_mut().into_iter().zip(g) {
                    for (w, d) in param.data_mut().iter_mut().zip(grad.data()) {
                        *w -= lr * d;
                    }
                }
            }
        }
        final_loss = total / data.len() as f64;
    }
    for layer in model.layers_mut() {
        for param in layer.parameters_mut() {
            for w in param.data_mut() {
                *w = *w as f32 as f64;
            }
        }
    }
    if model.layers().iter().flat_map(|l| l.parameters()).any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("training diverged".into()));
    }
    Ok(TrainStats {
        final_loss,
        accuracy: accuracy(model, data)?,
    })
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(model: &Model, data: &[(Tensor, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no samples".into()));
    }
    let mut hits = 0;
    for (x, label) in data {
        if model.forward(x)?.predicted_class() == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// The desk CNN trained on a fresh corpus of `train_count` samples.
pub fn trained_desk_cnn(seed: u64, train_count: usize) -> Result<(Model, TrainStats)> {
    let mut model = desk_cnn(seed)?;
    let data: Vec<(Tensor, usize)> = corpus(train_count, seed ^ 0x5eed)?
        .into_iter()
        .map(|s| (s.image, s.label))
        .collect();
    let stats = train(
        &mut model,
        &data,
        &TrainConfig {
            seed,
            ..TrainConfig::default()
        },
    )?;
    Ok((model, stats))
}

/// Single dense layer, no softmax: `y = W x + b`.
pub fn random_linear(inputs: usize, classes: usize, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Model::new(
        vec![Layer::dense(
            normal_tensor(&[classes, inputs], 1.0, &mut rng)?,
            normal_tensor(&[classes], 0.5, &mut rng)?,
        )?],
        vec![inputs],
    )
}

/// Dense–ReLU stack ending in a softmax.
pub fn random_mlp(inputs: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut width = inputs;
    for &h in hidden {
        layers.push(he_dense(h, width, &mut rng)?);
        layers.push(Layer::Relu);
        width = h;
    }
    layers.push(he_dense(classes, width, &mut rng)?);
    layers.push(Layer::Softmax);
    Model::new(layers, vec![inputs])
}

/// conv → ReLU → max-pool → conv → ReLU → flatten → dense → softmax on a
/// `channels×size×size` input (`size` must be even).
pub fn random_cnn(channels: usize, size: usize, classes: usize, seed: u64) -> Result<Model> {
    if size < 2 || !size.is_multiple_of(2) {
        return Err(Error::Config(format!("random_cnn needs an even size, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = size / 2;
    Model::new(
        vec![
            he_conv(4, channels, 3, 1, &mut rng)?,
            Layer::Relu,
            Layer::MaxPool2d { window: 2, stride: 2 },
            he_conv(3, 4, 3, 1, &mut rng)?,
            Layer::Relu,
            Layer::Flatten,
            he_dense(classes, 3 * half * half, &mut rng)?,
            Layer::Softmax,
        ],
        vec![channels, size, size],
    )
}

/// `relu(x₁ − x₂) + x₂ = max(x₁, x₂)` on three inputs (x₃ unused), one output.
pub fn max_model() -> Result<Model> {
    Model::new(
        vec![
            Layer::dense(
                Tensor::new(vec![2, 3], vec![1.0, -1.0, 0.0, 0.0, 1.0, 0.0])?,
                Tensor::zeros(&[2])?,
            )?,
            Layer::Relu,
            Layer::dense(Tensor::new(vec![1, 2], vec![1.0, 1.0])?, Tensor::zeros(&[1])?)?,
        ],
        vec![3],
    )
}
