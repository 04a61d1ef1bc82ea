use crate::error::Result;
use crate::network::{backward_input, BackwardRuleSet, Model};
use crate::tensor::Tensor;

use super::{AttributionMap, Method, MethodConfig};

/// Relevance propagated from the class score (α = 2, β = 1 on convolutions,
/// ε-rule on dense layers). Not multiplied by the input: relevance is already
/// a contribution.
pub fn lrp_alpha2beta1(model: &Model, x: &Tensor, class: usize, cfg: &MethodConfig) -> Result<AttributionMap> {
    let trace = model.forward(x)?;
    let relevance = backward_input(model, &trace, class, cfg.score_mode, &BackwardRuleSet::lrp_alpha2beta1())?;
    AttributionMap::build(
        Method::Lrp,
        &relevance,
        class,
        cfg,
        &[
            ("lrp_conv_rule", "alpha2beta1".into()),
            ("lrp_dense_rule", "epsilon".into()),
            ("lrp_epsilon", crate::network::LRP_EPSILON.to_string()),
        ],
    )
}

/// DeepLIFT with the Rescale rule against the constant baseline image.
/// Scores sum to `y_c(x) − y_c(x_b)`.
pub fn deeplift_rescale(model: &Model, x: &Tensor, class: usize, cfg: &MethodConfig) -> Result<AttributionMap> {
    let baseline = cfg.baseline_image(x);
    let trace = model.forward(x)?;
    let reference = model.forward(&baseline)?;
    let multipliers = backward_input(
        model,
        &trace,
        class,
        cfg.score_mode,
        &BackwardRuleSet::deeplift_rescale(&reference),
    )?;
    let contrib = multipliers.zip_map(x, |m, v| m * (v - cfg.baseline_value))?;
    AttributionMap::build(
        Method::DeepLift,
        &contrib,
        class,
        cfg,
        &[("deeplift_rule", "rescale".into())],
    )
}
