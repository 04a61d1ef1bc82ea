use crate::error::{Error, Result};
use crate::network::{backward_to_layer_output, BackwardRuleSet, LayerKind, Model};
use crate::tensor::Tensor;

use super::{AttributionMap, Method, MethodConfig};

/// Bilinear resize of an `h×w` map with aligned corners: output corners equal
/// input corners.
pub fn bilinear_upsample(map: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = match map.shape() {
        [h, w] => (*h, *w),
        other => return Err(Error::Shape(format!("bilinear resize needs an h×w map, got {other:?}"))),
    };
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_in == 1 || n_out == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let src = map.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, out_h, h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, out_w, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::new(vec![out_h, out_w], out)
}

/// Gradient-weighted class activation map of the target conv layer (its
/// post-ReLU output when a ReLU follows directly), clamped at zero and
/// bilinearly resized to the input's spatial size.
pub fn gradcam(model: &Model, x: &Tensor, class: usize, cfg: &MethodConfig) -> Result<AttributionMap> {
    let convs = model.conv_layers();
    let conv = match cfg.gradcam_layer {
        Some(i) if convs.contains(&i) => i,
        Some(i) => return Err(Error::Config(format!("layer {i} is not a conv layer"))),
        None => *convs.last().ok_or(Error::NoConvLayer)?,
    };
    if x.rank() != 3 {
        return Err(Error::Shape("GradCAM needs a C×H×W input".into()));
    }
    let layers = model.layers();
    let target = if layers.get(conv + 1).map(|l| l.kind()) == Some(LayerKind::Relu) {
        conv + 1
    } else {
        conv
    };
    let trace = model.forward(x)?;
    let activation = &trace.records()[target].output;
    let grad = backward_to_layer_output(model, &trace, class, cfg.score_mode, &BackwardRuleSet::exact(), target)?;
    let (channels, h, w) = (activation.shape()[0], activation.shape()[1], activation.shape()[2]);
    let plane = h * w;
    let mut cam = vec![0.0; plane];
    for k in 0..channels {
        let g = &grad.data()[k * plane..(k + 1) * plane];
        let weight = g.iter().sum::<f64>() / plane as f64;
        for (c, a) in cam.iter_mut().zip(&activation.data()[k * plane..(k + 1) * plane]) {
            *c += weight * a;
        }
    }
    let cam = Tensor::new(vec![h, w], cam.into_iter().map(|v| v.max(0.0)).collect())?;
    let up = bilinear_upsample(&cam, x.shape()[1], x.shape()[2])?;
    let mut map = AttributionMap::build(
        Method::GradCam,
        &up,
        class,
        cfg,
        &[
            ("gradcam_layer", conv.to_string()),
            ("upsampling", "bilinear-align-corners".into()),
        ],
    )?;
    map.scores = up;
    Ok(map)
}
