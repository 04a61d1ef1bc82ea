//! Input-gradient backpropagation with per-layer-kind rule overrides.
//!
//! The same reverse sweep carries three kinds of signal: plain gradients
//! (saliency, guided backprop, GradCAM), relevance (LRP) and DeepLIFT
//! multipliers. What differs is the seed placed on the logits and the local
//! rule each layer applies.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

use super::layer::{dense_transpose, softmax, Layer, LayerKind};
use super::model::{ForwardTrace, Model, ScoreMode};

/// Stabilizer added to LRP denominators.
pub const LRP_EPSILON: f64 = 1e-9;

/// Below this input difference DeepLIFT falls back to the local gradient.
const RESCALE_DELTA_FLOOR: f64 = 1e-10;

/// Quadrature points for DeepLIFT multipliers across the softmax.
const SOFTMAX_PATH_POINTS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BackwardRule {
    ExactGradient,
    /// Passes only positive upstream gradient, and only where the forward input was positive.
    GuidedRelu,
    /// Relevance flows through unchanged.
    RelevancePassthrough,
    /// LRP-αβ over positive and negative contributions; biases are left out of
    /// the denominators so that relevance is conserved when α − β = 1.
    LrpAlphaBeta { alpha: f64, beta: f64, epsilon: f64 },
    /// LRP-ε (z-rule with a sign-matched stabilizer).
    LrpEpsilon { epsilon: f64 },
    /// DeepLIFT Rescale multipliers relative to a reference trace.
    DeepLiftRescale,
}

impl BackwardRule {
    pub fn name(self) -> &'static str {
        match self {
            BackwardRule::ExactGradient => "exact-gradient",
            BackwardRule::GuidedRelu => "guided-relu",
            BackwardRule::RelevancePassthrough => "relevance-passthrough",
            BackwardRule::LrpAlphaBeta { .. } => "lrp-alpha-beta",
            BackwardRule::LrpEpsilon { .. } => "lrp-epsilon",
            BackwardRule::DeepLiftRescale => "deeplift-rescale",
        }
    }
}

/// What quantity the sweep carries, which fixes how the logits are seeded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Signal {
    Gradient,
    Relevance,
    Multiplier,
}

#[derive(Clone, Debug)]
pub struct BackwardRuleSet<'r> {
    rules: [BackwardRule; 6],
    signal: Signal,
    reference: Option<&'r ForwardTrace>,
}

impl<'r> BackwardRuleSet<'r> {
    pub fn exact() -> Self {
        BackwardRuleSet {
            rules: [BackwardRule::ExactGradient; 6],
            signal: Signal::Gradient,
            reference: None,
        }
    }

    pub fn guided() -> Self {
        Self::exact().with_rule(LayerKind::Relu, BackwardRule::GuidedRelu)
    }

    /// Composite LRP preset: α2β1 on convolutions, ε-rule on dense layers,
    /// winner-take-all through max-pools.
    pub fn lrp_alpha2beta1() -> Self {
        BackwardRuleSet {
            rules: [BackwardRule::ExactGradient; 6],
            signal: Signal::Relevance,
            reference: None,
        }
        .with_rule(
            LayerKind::Conv2d,
            BackwardRule::LrpAlphaBeta {
                alpha: 2.0,
                beta: 1.0,
                epsilon: LRP_EPSILON,
            },
        )
        .with_rule(LayerKind::Dense, BackwardRule::LrpEpsilon { epsilon: LRP_EPSILON })
        .with_rule(LayerKind::Relu, BackwardRule::RelevancePassthrough)
    }

    pub fn deeplift_rescale(reference: &'r ForwardTrace) -> Self {
        BackwardRuleSet {
            rules: [BackwardRule::ExactGradient; 6],
            signal: Signal::Multiplier,
            reference: Some(reference),
        }
        .with_rule(LayerKind::Relu, BackwardRule::DeepLiftRescale)
        .with_rule(LayerKind::MaxPool2d, BackwardRule::DeepLiftRescale)
    }

    pub fn with_rule(mut self, kind: LayerKind, rule: BackwardRule) -> Self {
        self.rules[kind.index()] = rule;
        self
    }

    pub fn rule(&self, kind: LayerKind) -> BackwardRule {
        self.rules[kind.index()]
    }

    pub fn signal(&self) -> Signal {
        self.signal
    }
}

impl Default for BackwardRuleSet<'_> {
    fn default() -> Self {
        Self::exact()
    }
}

fn check_trace(model: &Model, trace: &ForwardTrace, what: &str) -> Result<()> {
    if trace.len() != model.layers().len() || trace.input().shape() != model.input_shape() {
        return Err(Error::Shape(format!("{what} was not produced by this model")));
    }
    Ok(())
}

/// Signal on the logits that starts the sweep for class `class`.
pub fn score_seed(
    model: &Model,
    trace: &ForwardTrace,
    class: usize,
    mode: ScoreMode,
    rules: &BackwardRuleSet<'_>,
) -> Result<Tensor> {
    model.check_class(class)?;
    let logits = trace.logits();
    let n = logits.len();
    let mut seed = vec![0.0; n];
    match (rules.signal, mode) {
        (Signal::Gradient, ScoreMode::Logit) | (Signal::Multiplier, ScoreMode::Logit) => seed[class] = 1.0,
        (Signal::Gradient, ScoreMode::Softmax) => seed = softmax_gradient(logits.data(), class),
        (Signal::Relevance, _) => seed[class] = trace.class_score(class, mode),
        (Signal::Multiplier, ScoreMode::Softmax) => {
            let reference = rules
                .reference
                .ok_or_else(|| Error::Config("DeepLIFT rules need a reference trace".into()))?;
            seed = softmax_multipliers(logits.data(), reference.logits().data(), class);
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![n], seed))
}

/// ∂ softmax(z)_c / ∂ z.
fn softmax_gradient(logits: &[f64], class: usize) -> Vec<f64> {
    let p = softmax(logits);
    let pc = p[class];
    p.iter()
        .enumerate()
        .map(|(j, &pj)| if j == class { pc * (1.0 - pj) } else { -pc * pj })
        .collect()
}

/// Multipliers m with Σ m_j Δz_j = Δp_c across the softmax, from the
/// straight-line path integral of its gradient (midpoint rule, then rescaled
/// so the sum matches Δp_c exactly).
fn softmax_multipliers(logits: &[f64], reference: &[f64], class: usize) -> Vec<f64> {
    let n = logits.len();
    let delta: Vec<f64> = logits.iter().zip(reference).map(|(a, b)| a - b).collect();
    let mut avg = vec![0.0; n];
    for q in 0..SOFTMAX_PATH_POINTS {
        let t = (q as f64 + 0.5) / SOFTMAX_PATH_POINTS as f64;
        let z: Vec<f64> = reference.iter().zip(&delta).map(|(r, d)| r + t * d).collect();
        for (a, g) in avg.iter_mut().zip(softmax_gradient(&z, class)) {
            *a += g;
        }
    }
    for a in &mut avg {
        *a /= SOFTMAX_PATH_POINTS as f64;
    }
    let target = softmax(logits)[class] - softmax(reference)[class];
    let approx: f64 = avg.iter().zip(&delta).map(|(a, d)| a * d).sum();
    if approx.abs() > f64::MIN_POSITIVE && target != 0.0 {
        let scale = target / approx;
        for a in &mut avg {
            *a *= scale;
        }
    }
    avg
}

/// Propagates `seed` (a signal on the logits) down to the input of layer
/// `stop`, calling `visit(i, signal_at_output_of_i)` on the way.
pub(crate) fn propagate(
    model: &Model,
    trace: &ForwardTrace,
    seed: Tensor,
    rules: &BackwardRuleSet<'_>,
    stop: usize,
    mut visit: impl FnMut(usize, &Tensor),
) -> Result<Tensor> {
    check_trace(model, trace, "trace")?;
    if let Some(reference) = rules.reference {
        check_trace(model, reference, "reference trace")?;
    }
    let depth = trace.logit_depth();
    if seed.shape() != trace.logits().shape() {
        return Err(Error::Shape("seed does not match the logit shape".into()));
    }
    let mut signal = seed;
    for i in (stop..depth).rev() {
        visit(i, &signal);
        let layer = &model.layers()[i];
        let rule = rules.rule(layer.kind());
        let reference = rules.reference.map(|r| &r.records()[i]);
        signal = layer_backward(layer, &trace.records()[i], reference, rule, &signal)?;
    }
    Ok(signal)
}

/// Propagates the class-score signal all the way to the input.
pub fn backward_input(
    model: &Model,
    trace: &ForwardTrace,
    class: usize,
    mode: ScoreMode,
    rules: &BackwardRuleSet<'_>,
) -> Result<Tensor> {
    let seed = score_seed(model, trace, class, mode, rules)?;
    propagate(model, trace, seed, rules, 0, |_, _| {})
}

/// Signal with respect to the output of layer `layer` (used by GradCAM).
pub fn backward_to_layer_output(
    model: &Model,
    trace: &ForwardTrace,
    class: usize,
    mode: ScoreMode,
    rules: &BackwardRuleSet<'_>,
    layer: usize,
) -> Result<Tensor> {
    if layer >= trace.logit_depth() {
        return Err(Error::Range(format!("layer {layer} is at or above the logits")));
    }
    let seed = score_seed(model, trace, class, mode, rules)?;
    propagate(model, trace, seed, rules, layer + 1, |_, _| {})
}

fn rule_error(rule: BackwardRule, layer: &Layer) -> Error {
    Error::Rule {
        rule: rule.name(),
        layer: layer.kind().name(),
    }
}

fn layer_backward(
    layer: &Layer,
    record: &super::model::LayerRecord,
    reference: Option<&super::model::LayerRecord>,
    rule: BackwardRule,
    signal: &Tensor,
) -> Result<Tensor> {
    let x = &record.input;
    use BackwardRule::*;
    match (layer, rule) {
        (Layer::Dense { weight, .. }, ExactGradient | DeepLiftRescale) => Ok(Tensor::from_parts_unchecked(
            x.shape().to_vec(),
            dense_transpose(weight, signal.data()),
        )),
        (Layer::Dense { weight, bias }, LrpEpsilon { epsilon }) => {
            let z: Vec<f64> = record.output.data().iter().zip(bias.data()).map(|(y, b)| y - b).collect();
            let q = epsilon_quotients(&z, signal.data(), epsilon);
            let back = dense_transpose(weight, &q);
            Ok(Tensor::from_parts_unchecked(
                x.shape().to_vec(),
                back.iter().zip(x.data()).map(|(b, xi)| b * xi).collect(),
            ))
        }
        (Layer::Dense { weight, .. }, LrpAlphaBeta { alpha, beta, epsilon }) => {
            let ops = LinearOps::Dense(weight);
            alpha_beta(&ops, x, signal, alpha, beta, epsilon)
        }
        (Layer::Conv2d { kernels, stride, padding, .. }, ExactGradient | DeepLiftRescale) => {
            tensor::conv2d_transpose(signal, kernels, x.shape(), *stride, *padding)
        }
        (Layer::Conv2d { kernels, bias, stride, padding }, LrpEpsilon { epsilon }) => {
            let plane = signal.len() / bias.len();
            let z: Vec<f64> = record
                .output
                .data()
                .iter()
                .enumerate()
                .map(|(i, y)| y - bias.data()[i / plane])
                .collect();
            let q = epsilon_quotients(&z, signal.data(), epsilon);
            let q = Tensor::from_parts_unchecked(signal.shape().to_vec(), q);
            let back = tensor::conv2d_transpose(&q, kernels, x.shape(), *stride, *padding)?;
            back.zip_map(x, |b, xi| b * xi)
        }
        (Layer::Conv2d { kernels, stride, padding, .. }, LrpAlphaBeta { alpha, beta, epsilon }) => {
            let ops = LinearOps::Conv {
                kernels,
                stride: *stride,
                padding: *padding,
            };
            alpha_beta(&ops, x, signal, alpha, beta, epsilon)
        }
        (Layer::Relu, ExactGradient) => signal.zip_map(x, |s, xi| if xi > 0.0 { s } else { 0.0 }),
        (Layer::Relu, GuidedRelu) => signal.zip_map(x, |s, xi| if xi > 0.0 && s > 0.0 { s } else { 0.0 }),
        (Layer::Relu, RelevancePassthrough) => Ok(signal.clone()),
        (Layer::Relu, DeepLiftRescale) => {
            let reference = reference.ok_or_else(|| Error::Config("missing reference trace".into()))?;
            let data = (0..x.len())
                .map(|i| {
                    let dx = x.data()[i] - reference.input.data()[i];
                    let m = if dx.abs() > RESCALE_DELTA_FLOOR {
                        (record.output.data()[i] - reference.output.data()[i]) / dx
                    } else if x.data()[i] > 0.0 {
                        1.0
                    } else {
                        0.0
                    };
                    signal.data()[i] * m
                })
                .collect();
            Ok(Tensor::from_parts_unchecked(x.shape().to_vec(), data))
        }
        (Layer::MaxPool2d { .. }, ExactGradient | GuidedRelu | RelevancePassthrough) => {
            let routing = record
                .argmax
                .as_ref()
                .ok_or_else(|| Error::Shape("max-pool record lacks argmax routing".into()))?;
            let mut out = vec![0.0; x.len()];
            for (o, &src) in routing.iter().enumerate() {
                out[src] += signal.data()[o];
            }
            Ok(Tensor::from_parts_unchecked(x.shape().to_vec(), out))
        }
        (Layer::MaxPool2d { window, stride }, DeepLiftRescale) => {
            let reference = reference.ok_or_else(|| Error::Config("missing reference trace".into()))?;
            let mut out = vec![0.0; x.len()];
            for o in 0..signal.len() {
                let cells = tensor::maxpool2d_window(x.shape(), o, *window, *stride);
                let start: Vec<f64> = cells.iter().map(|&c| reference.input.data()[c]).collect();
                let delta: Vec<f64> = cells
                    .iter()
                    .map(|&c| x.data()[c] - reference.input.data()[c])
                    .collect();
                for (cell, frac) in cells.iter().zip(max_path_fractions(&start, &delta)) {
                    out[*cell] += signal.data()[o] * frac;
                }
            }
            Ok(Tensor::from_parts_unchecked(x.shape().to_vec(), out))
        }
        (Layer::Flatten, ExactGradient | GuidedRelu | RelevancePassthrough | DeepLiftRescale) => {
            signal.reshape(x.shape())
        }
        (layer, rule) => Err(rule_error(rule, layer)),
    }
}

/// `signal / (z ± ε)` with `z` the bias-free pre-activation, so relevance is
/// conserved rather than partly absorbed by the bias.
fn epsilon_quotients(z: &[f64], signal: &[f64], epsilon: f64) -> Vec<f64> {
    z.iter()
        .zip(signal)
        .map(|(&zj, &sj)| {
            let stab = if zj >= 0.0 { epsilon } else { -epsilon };
            sj / (zj + stab)
        })
        .collect()
}

/// For `max_i(start_i + t·delta_i)` on `t ∈ [0, 1]`, the fraction of the path
/// on which each entry is the (lowest-index) maximiser. Since the maximum is
/// piecewise linear in `t`, `Σ fraction_i · delta_i` equals the change of the
/// maximum exactly.
pub(crate) fn max_path_fractions(start: &[f64], delta: &[f64]) -> Vec<f64> {
    let n = start.len();
    let mut cuts = vec![0.0, 1.0];
    for i in 0..n {
        for j in (i + 1)..n {
            let slope = delta[i] - delta[j];
            if slope != 0.0 {
                let t = (start[j] - start[i]) / slope;
                if t > 0.0 && t < 1.0 {
                    cuts.push(t);
                }
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    cuts.dedup();
    let mut frac = vec![0.0; n];
    for w in cuts.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let mut best = 0;
        for i in 1..n {
            if start[i] + t * delta[i] > start[best] + t * delta[best] {
                best = i;
            }
        }
        frac[best] += w[1] - w[0];
    }
    frac
}

enum LinearOps<'a> {
    Dense(&'a Tensor),
    Conv {
        kernels: &'a Tensor,
        stride: usize,
        padding: usize,
    },
}

impl LinearOps<'_> {
    fn apply(&self, weights: &Tensor, x: &Tensor) -> Result<Tensor> {
        match self {
            LinearOps::Dense(_) => {
                let zero = Tensor::zeros(&[weights.shape()[0]])?;
                super::layer::dense_forward(weights, &zero, x)
            }
            LinearOps::Conv { stride, padding, .. } => tensor::conv2d(x, weights, *stride, *padding),
        }
    }

    fn transpose(&self, weights: &Tensor, signal: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
        match self {
            LinearOps::Dense(_) => Ok(Tensor::from_parts_unchecked(
                input_shape.to_vec(),
                dense_transpose(weights, signal.data()),
            )),
            LinearOps::Conv { stride, padding, .. } => {
                tensor::conv2d_transpose(signal, weights, input_shape, *stride, *padding)
            }
        }
    }

    fn weights(&self) -> &Tensor {
        match self {
            LinearOps::Dense(w) => w,
            LinearOps::Conv { kernels, .. } => kernels,
        }
    }
}

/// LRP-αβ for a linear map. When a unit has only positive (only negative)
/// contributions, all of its relevance is split over those, so each unit's
/// relevance is conserved up to the stabilizer.
fn alpha_beta(ops: &LinearOps<'_>, x: &Tensor, relevance: &Tensor, alpha: f64, beta: f64, epsilon: f64) -> Result<Tensor> {
    let w = ops.weights();
    let w_pos = w.map(|v| v.max(0.0));
    let w_neg = w.map(|v| v.min(0.0));
    let x_pos = x.map(|v| v.max(0.0));
    let x_neg = x.map(|v| v.min(0.0));

    let z_pos = ops.apply(&w_pos, &x_pos)?.zip_map(&ops.apply(&w_neg, &x_neg)?, |a, b| a + b)?;
    let z_neg = ops.apply(&w_neg, &x_pos)?.zip_map(&ops.apply(&w_pos, &x_neg)?, |a, b| a + b)?;

    let n = relevance.len();
    let mut a = vec![0.0; n];
    let mut c = vec![0.0; n];
    for j in 0..n {
        let (zp, zn, r) = (z_pos.data()[j], z_neg.data()[j], relevance.data()[j]);
        let (ae, be) = match (zp > epsilon, zn < -epsilon) {
            (true, true) => (alpha, beta),
            (true, false) => (1.0, 0.0),
            (false, true) => (0.0, -1.0),
            (false, false) => (0.0, 0.0),
        };
        if ae != 0.0 {
            a[j] = ae * r / (zp + epsilon);
        }
        if be != 0.0 {
            c[j] = be * r / (zn - epsilon);
        }
    }
    let a = Tensor::from_parts_unchecked(relevance.shape().to_vec(), a);
    let c = Tensor::from_parts_unchecked(relevance.shape().to_vec(), c);
    let shape = x.shape();

    let pos_a = ops.transpose(&w_pos, &a, shape)?;
    let neg_a = ops.transpose(&w_neg, &a, shape)?;
    let neg_c = ops.transpose(&w_neg, &c, shape)?;
    let pos_c = ops.transpose(&w_pos, &c, shape)?;
    let data = (0..x.len())
        .map(|i| {
            let (xp, xn) = (x_pos.data()[i], x_neg.data()[i]);
            xp * pos_a.data()[i] + xn * neg_a.data()[i] - (xp * neg_c.data()[i] + xn * pos_c.data()[i])
        })
        .collect();
    Ok(Tensor::from_parts_unchecked(shape.to_vec(), data))
}
