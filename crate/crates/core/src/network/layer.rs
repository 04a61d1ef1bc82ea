use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    MaxPool2d,
    Flatten,
    Softmax,
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        LayerKind::Dense,
        LayerKind::Conv2d,
        LayerKind::Relu,
        LayerKind::MaxPool2d,
        LayerKind::Flatten,
        LayerKind::Softmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::Flatten => "flatten",
            LayerKind::Softmax => "softmax",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// `weight` is `out×in`, `bias` has length `out`.
    Dense { weight: Tensor, bias: Tensor },
    /// `kernels` is `C_out×C_in×kh×kw`, `bias` has length `C_out`.
    Conv2d {
        kernels: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d { window: usize, stride: usize },
    Flatten,
    Softmax,
}

impl Layer {
    pub fn dense(weight: Tensor, bias: Tensor) -> Result<Layer> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::ModelFormat(format!(
                "dense weight {:?} and bias {:?} are inconsistent",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Layer::Dense { weight, bias })
    }

    pub fn conv2d(kernels: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Layer> {
        if kernels.rank() != 4 || bias.shape() != [kernels.shape()[0]] || stride == 0 {
            return Err(Error::ModelFormat(format!(
                "conv kernels {:?}, bias {:?}, stride {stride} are inconsistent",
                kernels.shape(),
                bias.shape()
            )));
        }
        Ok(Layer::Conv2d {
            kernels,
            bias,
            stride,
            padding,
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Conv2d { .. } => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2d { .. } => LayerKind::MaxPool2d,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Softmax => LayerKind::Softmax,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Dense { weight, bias } => weight.len() + bias.len(),
            Layer::Conv2d { kernels, bias, .. } => kernels.len() + bias.len(),
            _ => 0,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { weight, .. } => {
                if input != [weight.shape()[1]] {
                    return Err(Error::Shape(format!(
                        "dense layer expects [{}], got {input:?}",
                        weight.shape()[1]
                    )));
                }
                Ok(vec![weight.shape()[0]])
            }
            Layer::Conv2d {
                kernels,
                stride,
                padding,
                ..
            } => tensor::conv2d_output_shape(
                input,
                kernels.shape(),
                tensor::ConvGeometry {
                    stride: *stride,
                    padding: *padding,
                },
            ),
            Layer::MaxPool2d { window, stride } => tensor::maxpool2d_output_shape(input, *window, *stride),
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Softmax => {
                if input.len() != 1 {
                    return Err(Error::Shape(format!("softmax expects a vector, got {input:?}")));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Evaluates the layer; max-pool layers also return their argmax routing.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
        match self {
            Layer::Dense { weight, bias } => Ok((dense_forward(weight, bias, x)?, None)),
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
            } => {
                let mut y = tensor::conv2d(x, kernels, *stride, *padding)?;
                add_channel_bias(&mut y, bias);
                Ok((y, None))
            }
            Layer::Relu => Ok((tensor::relu(x), None)),
            Layer::MaxPool2d { window, stride } => {
                let (y, idx) = tensor::maxpool2d(x, *window, *stride)?;
                Ok((y, Some(idx)))
            }
            Layer::Flatten => Ok((x.reshape(&[x.len()])?, None)),
            Layer::Softmax => {
                self.output_shape(x.shape())?;
                Ok((Tensor::from_parts_unchecked(x.shape().to_vec(), softmax(x.data())), None))
            }
        }
    }

    pub(crate) fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Conv2d { kernels, bias, .. } => vec![kernels, bias],
            _ => Vec::new(),
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Conv2d { kernels, bias, .. } => vec![kernels, bias],
            _ => Vec::new(),
        }
    }
}

pub(crate) fn dense_forward(weight: &Tensor, bias: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
    if x.shape() != [inp] {
        return Err(Error::Shape(format!("dense layer expects [{inp}], got {:?}", x.shape())));
    }
    let w = weight.data();
    let y = (0..out)
        .map(|o| {
            let row = &w[o * inp..(o + 1) * inp];
            row.iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>() + bias.data()[o]
        })
        .collect();
    Ok(Tensor::from_parts_unchecked(vec![out], y))
}

/// `Wᵀ s` for an `out×in` weight matrix.
pub(crate) fn dense_transpose(weight: &Tensor, signal: &[f64]) -> Vec<f64> {
    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
    let w = weight.data();
    let mut r = vec![0.0; inp];
    for o in 0..out {
        let s = signal[o];
        if s == 0.0 {
            continue;
        }
        for (acc, wv) in r.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
            *acc += wv * s;
        }
    }
    r
}

pub(crate) fn add_channel_bias(y: &mut Tensor, bias: &Tensor) {
    let plane = y.len() / bias.len();
    for (c, b) in bias.data().iter().enumerate() {
        for v in &mut y.data_mut()[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
