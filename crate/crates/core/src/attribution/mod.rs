//! Attribution methods. Each produces an [`AttributionMap`]: one real score
//! per spatial location of the input, with channels summed.

mod gradcam;
mod gradient;
mod propagation;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{Model, ScoreMode};
use crate::par::Parallelism;
use crate::tensor::Tensor;

pub use gradcam::{bilinear_upsample, gradcam};
pub use gradient::{guided_backprop, integrated_gradient, saliency, smoothgrad};
pub use propagation::{deeplift_rescale, lrp_alpha2beta1};


/// How an input tensor splits into pixels and channels.
///
/// `C×H×W` inputs have `H·W` pixels with `C` channels each; rank-1 and rank-2
/// inputs have one channel per element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelLayout {
    pub channels: usize,
    pub pixels: usize,
    pub spatial_shape: Vec<usize>,
}

impl PixelLayout {
    pub fn of(shape: &[usize]) -> Result<PixelLayout> {
        match shape {
            [n] => Ok(PixelLayout {
                channels: 1,
                pixels: *n,
                spatial_shape: vec![*n],
            }),
            [h, w] => Ok(PixelLayout {
                channels: 1,
                pixels: h * w,
                spatial_shape: vec![*h, *w],
            }),
            [c, h, w] => Ok(PixelLayout {
                channels: *c,
                pixels: h * w,
                spatial_shape: vec![*h, *w],
            }),
            other => Err(Error::Shape(format!("unsupported input rank for pixels: {other:?}"))),
        }
    }

    /// Flat tensor index of channel `channel` of pixel `pixel`.
    pub fn index(&self, channel: usize, pixel: usize) -> usize {
        channel * self.pixels + pixel
    }
}

/// Sums a per-element attribution over channels.
pub fn channel_collapse(t: &Tensor) -> Result<Tensor> {
    let layout = PixelLayout::of(t.shape())?;
    let mut out = vec![0.0; layout.pixels];
    for c in 0..layout.channels {
        for (p, acc) in out.iter_mut().enumerate() {
            *acc += t.data()[layout.index(c, p)];
        }
    }
    Tensor::new(layout.spatial_shape, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Saliency,
    IntegratedGradient,
    SmoothGrad,
    GuidedBackprop,
    Lrp,
    DeepLift,
    GradCam,
    Random,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Saliency,
        Method::IntegratedGradient,
        Method::SmoothGrad,
        Method::GuidedBackprop,
        Method::Lrp,
        Method::DeepLift,
        Method::GradCam,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Saliency => "saliency",
            Method::IntegratedGradient => "ig",
            Method::SmoothGrad => "smoothgrad",
            Method::GuidedBackprop => "gb",
            Method::Lrp => "lrp",
            Method::DeepLift => "deeplift",
            Method::GradCam => "gradcam",
            Method::Random => "random",
        }
    }

    /// Everything except the random baseline.
    pub fn is_gradient_based(self) -> bool {
        self != Method::Random
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attribution method `{s}`")))
    }
}

/// Hyperparameters shared by the attribution methods.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodConfig {
    pub ig_steps: usize,
    pub sg_samples: usize,
    pub sg_noise_fraction: f64,
    pub baseline_value: f64,
    pub rng_seed: u64,
    /// Layer index of the target conv layer; `None` means the last one.
    pub gradcam_layer: Option<usize>,
    pub score_mode: ScoreMode,
    pub parallelism: Parallelism,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            ig_steps: 50,
            sg_samples: 50,
            sg_noise_fraction: 0.20,
            baseline_value: 0.0,
            rng_seed: 0,
            gradcam_layer: None,
            score_mode: ScoreMode::Softmax,
            parallelism: Parallelism::default(),
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ig_steps == 0 {
            return Err(Error::Config("ig_steps must be at least 1".into()));
        }
        if self.sg_samples == 0 {
            return Err(Error::Config("sg_samples must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sg_noise_fraction) {
            return Err(Error::Config("sg_noise_fraction must lie in [0, 1]".into()));
        }
        if !self.baseline_value.is_finite() {
            return Err(Error::Config("baseline value must be finite".into()));
        }
        Ok(())
    }

    pub(crate) fn baseline_image(&self, x: &Tensor) -> Tensor {
        x.map(|_| self.baseline_value)
    }
}

/// Per-pixel scores explaining one class output.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    pub scores: Tensor,
    pub method: String,
    pub class_index: usize,
    pub baseline_value: f64,
    pub metadata: BTreeMap<String, String>,
}

impl AttributionMap {
    /// Wraps externally computed scores (used to inject fixed maps into the pipeline).
    pub fn from_scores(method: impl Into<String>, scores: Tensor, class_index: usize, baseline_value: f64) -> Result<Self> {
        if !scores.is_finite() {
            return Err(Error::NonFinite("attribution scores".into()));
        }
        Ok(AttributionMap {
            scores,
            method: method.into(),
            class_index,
            baseline_value,
            metadata: BTreeMap::new(),
        })
    }

    pub(crate) fn build(
        method: Method,
        per_element: &Tensor,
        class_index: usize,
        cfg: &MethodConfig,
        metadata: &[(&str, String)],
    ) -> Result<Self> {
        let scores = channel_collapse(per_element)?;
        if !scores.is_finite() {
            return Err(Error::NonFinite(format!("{method} attribution")));
        }
        let mut meta: BTreeMap<String, String> = metadata.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        meta.insert("score_mode".into(), cfg.score_mode.name().into());
        Ok(AttributionMap {
            scores,
            method: method.name().into(),
            class_index,
            baseline_value: cfg.baseline_value,
            metadata: meta,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.scores.len()
    }
}

/// I.i.d. uniform scores in the open interval (0, 1), one per pixel.
pub fn random_attribution(x: &Tensor, seed: u64) -> Result<AttributionMap> {
    let layout = PixelLayout::of(x.shape())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<f64> = (0..layout.pixels).map(|_| rng.sample(Open01)).collect();
    let mut map = AttributionMap::from_scores(
        Method::Random.name(),
        Tensor::new(layout.spatial_shape, scores)?,
        0,
        0.0,
    )?;
    map.metadata.insert("seed".into(), seed.to_string());
    Ok(map)
}

/// Runs `method` for class `class`.
pub fn attribute(method: Method, model: &Model, x: &Tensor, class: usize, cfg: &MethodConfig) -> Result<AttributionMap> {
    cfg.validate()?;
    model.check_class(class)?;
    match method {
        Method::Saliency => saliency(model, x, class, cfg),
        Method::IntegratedGradient => integrated_gradient(model, x, class, cfg),
        Method::SmoothGrad => smoothgrad(model, x, class, cfg),
        Method::GuidedBackprop => guided_backprop(model, x, class, cfg),
        Method::Lrp => lrp_alpha2beta1(model, x, class, cfg),
        Method::DeepLift => deeplift_rescale(model, x, class, cfg),
        Method::GradCam => gradcam(model, x, class, cfg),
        Method::Random => {
            let mut map = random_attribution(x, cfg.rng_seed)?;
            map.class_index = class;
            map.baseline_value = cfg.baseline_value;
            Ok(map)
        }
    }
}
