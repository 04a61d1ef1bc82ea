use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::network::{backward_input, BackwardRuleSet, Model};
use crate::par::{self, Parallelism};
use crate::tensor::Tensor;

use super::{AttributionMap, Method, MethodConfig};

fn input_gradient(model: &Model, x: &Tensor, class: usize, cfg: &MethodConfig, rules: &BackwardRuleSet<'_>) -> Result<Tensor> {
    let trace = model.forward(x)?;
    backward_input(model, &trace, class, cfg.score_mode, rules)
}

fn times_input(grad: &Tensor, x: &Tensor) -> Result<Tensor> {
    grad.zip_map(x, |g, v| g * v)
}

/// grad × input.
pub fn saliency(model: &Model, x: &Tensor, class: usize, cfg: &MethodConfig) -> Result<AttributionMap> {
    let grad = input_gradient(model, x, class, cfg, &BackwardRuleSet::exact())?;
    AttributionMap::build(Method::Saliency, &times_input(&grad, x)?, class, cfg, &[])
}

/// Guided backprop gradient × input.
pub fn guided_backprop(model: &Model, x: &Tensor, class: usize, cfg: &MethodConfig) -> Result<AttributionMap> {
    let grad = input_gradient(model, x, class, cfg, &BackwardRuleSet::guided())?;
    AttributionMap::build(Method::GuidedBackprop, &times_input(&grad, x)?, class, cfg, &[])
}

/// `(x − baseline) ⊙ mean_i grad(baseline + (i/steps)(x − baseline))` for
/// `i = 0..steps` (left Riemann sum of the path integral).
pub(crate) fn integrate_along_path<G>(grad: G, x: &Tensor, baseline: &Tensor, steps: usize, mode: Parallelism) -> Result<Tensor>
where
    G: Fn(&Tensor) -> Result<Tensor> + Sync + Send,
{
    if steps == 0 {
        return Err(Error::Config("path integration needs at least one step".into()));
    }
    let delta = x.zip_map(baseline, |a, b| a - b)?;
    let grads = par::try_map(mode, steps, |i| {
        let t = i as f64 / steps as f64;
        let point = baseline.zip_map(&delta, |b, d| b + t * d)?;
        grad(&point)
    })?;
    let mut total = vec![0.0; x.len()];
    for g in &grads {
        if g.shape() != x.shape() {
            return Err(Error::Shape("path gradient has the wrong shape".into()));
        }
        for (acc, v) in total.iter_mut().zip(g.data()) {
            *acc += v;
        }
    }
    let data = total
        .iter()
        .zip(delta.data())
        .map(|(s, d)| d * s / steps as f64)
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub fn integrated_gradient(model: &Model, x: &Tensor, class: usize, cfg: &MethodConfig) -> Result<AttributionMap> {
    cfg.validate()?;
    let baseline = cfg.baseline_image(x);
    let rules = BackwardRuleSet::exact();
    let contrib = integrate_along_path(
        |p| input_gradient(model, p, class, cfg, &rules),
        x,
        &baseline,
        cfg.ig_steps,
        cfg.parallelism,
    )?;
    AttributionMap::build(
        Method::IntegratedGradient,
        &contrib,
        class,
        cfg,
        &[
            ("ig_steps", cfg.ig_steps.to_string()),
            ("ig_scheme", "left-riemann".into()),
        ],
    )
}

/// Mean gradient over Gaussian-perturbed copies of `x`, times the clean `x`.
/// The noise scale is `sg_noise_fraction · (max(x) − min(x))`.
pub fn smoothgrad(model: &Model, x: &Tensor, class: usize, cfg: &MethodConfig) -> Result<AttributionMap> {
    cfg.validate()?;
    let sigma = cfg.sg_noise_fraction * (x.max() - x.min());
    let rules = BackwardRuleSet::exact();
    let meta = [
        ("sg_samples", cfg.sg_samples.to_string()),
        ("sg_noise_fraction", cfg.sg_noise_fraction.to_string()),
        ("sg_sigma", sigma.to_string()),
        ("seed", cfg.rng_seed.to_string()),
    ];
    if sigma == 0.0 {
        let grad = input_gradient(model, x, class, cfg, &rules)?;
        return AttributionMap::build(Method::SmoothGrad, &times_input(&grad, x)?, class, cfg, &meta);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("noise scale: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let noisy: Vec<Tensor> = (0..cfg.sg_samples)
        .map(|_| {
            let data = x.data().iter().map(|v| v + normal.sample(&mut rng)).collect();
            Tensor::new(x.shape().to_vec(), data)
        })
        .collect::<Result<_>>()?;
    let grads = par::try_map(cfg.parallelism, noisy.len(), |i| input_gradient(model, &noisy[i], class, cfg, &rules))?;
    let mut mean = vec![0.0; x.len()];
    for g in &grads {
        for (acc, v) in mean.iter_mut().zip(g.data()) {
            *acc += v;
        }
    }
    let n = cfg.sg_samples as f64;
    let data = mean.iter().zip(x.data()).map(|(s, v)| s / n * v).collect();
    AttributionMap::build(Method::SmoothGrad, &Tensor::new(x.shape().to_vec(), data)?, class, cfg, &meta)
}
