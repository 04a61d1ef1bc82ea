//! Dense row-major `f64` tensors and the handful of kernels the network needs.

use std::fmt;

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` stored in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Shape(format!("extents must be positive, got {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Like [`Tensor::new`] but also rejects NaN and infinities.
    pub fn new_finite(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        if !t.is_finite() {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(t)
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Index of the largest element; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

impl ElementwiseOp {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
            ElementwiseOp::Div => a / b,
            ElementwiseOp::Max => a.max(b),
            ElementwiseOp::Min => a.min(b),
        }
    }
}

/// Right-hand side of [`elementwise`]: another tensor of the same shape or a scalar.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

impl<'a> From<&'a Tensor> for Operand<'a> {
    fn from(t: &'a Tensor) -> Self {
        Operand::Tensor(t)
    }
}

impl From<f64> for Operand<'_> {
    fn from(v: f64) -> Self {
        Operand::Scalar(v)
    }
}

pub fn elementwise<'a>(op: ElementwiseOp, a: &Tensor, b: impl Into<Operand<'a>>) -> Result<Tensor> {
    match b.into() {
        Operand::Tensor(b) => a.zip_map(b, |x, y| op.apply(x, y)),
        Operand::Scalar(s) => Ok(a.map(|x| op.apply(x, s))),
    }
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|v| v.max(0.0))
}

/// Standard matrix product of `m×k` and `k×n` tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Shape(format!(
            "matmul needs m×k · k×n, got {:?} · {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.data[i * k + p] * b.data[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![m, n], out))
}

/// Stride/padding hyperparameters shared by the convolution kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Shape("stride must be at least 1".into()));
        }
        let padded = input + 2 * self.padding;
        if kernel > padded {
            return Err(Error::Shape(format!(
                "kernel extent {kernel} exceeds padded input {padded}"
            )));
        }
        Ok((padded - kernel) / self.stride + 1)
    }
}

fn conv_dims(input: &[usize], kernels: &[usize]) -> Result<()> {
    if input.len() != 3 || kernels.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d needs C×H×W input and O×C×kh×kw kernels, got {input:?} and {kernels:?}"
        )));
    }
    if input[0] != kernels[1] {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {}, kernels expect {}",
            input[0], kernels[1]
        )));
    }
    Ok(())
}

/// Output shape of a convolution without evaluating it.
pub fn conv2d_output_shape(input: &[usize], kernels: &[usize], geom: ConvGeometry) -> Result<Vec<usize>> {
    conv_dims(input, kernels)?;
    let oh = geom.output_extent(input[1], kernels[2])?;
    let ow = geom.output_extent(input[2], kernels[3])?;
    Ok(vec![kernels[0], oh, ow])
}

/// Zero-padded cross-correlation of a `C×H×W` input with `O×C×kh×kw` kernels.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let geom = ConvGeometry { stride, padding };
    let out_shape = conv2d_output_shape(&input.shape, &kernels.shape, geom)?;
    let (c, h, w) = (input.shape[0], input.shape[1] as isize, input.shape[2] as isize);
    let (o, kh, kw) = (kernels.shape[0], kernels.shape[2], kernels.shape[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let pad = padding as isize;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ic in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            let iv = input.data[(ic * h as usize + iy as usize) * w as usize + ix as usize];
                            let kv = kernels.data[((oc * c + ic) * kh + ky) * kw + kx];
                            acc += iv * kv;
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(out_shape, out))
}

/// Adjoint of [`conv2d`] with respect to its input: maps an `O×H'×W'` signal
/// back onto a tensor of `input_shape`.
pub fn conv2d_transpose(
    signal: &Tensor,
    kernels: &Tensor,
    input_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let geom = ConvGeometry { stride, padding };
    let out_shape = conv2d_output_shape(input_shape, &kernels.shape, geom)?;
    if signal.shape != out_shape {
        return Err(Error::Shape(format!(
            "transpose conv signal {:?} does not match forward output {out_shape:?}",
            signal.shape
        )));
    }
    let (c, h, w) = (input_shape[0], input_shape[1] as isize, input_shape[2] as isize);
    let (o, kh, kw) = (kernels.shape[0], kernels.shape[2], kernels.shape[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let pad = padding as isize;
    let mut out = vec![0.0; c * (h * w) as usize];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = signal.data[(oc * oh + oy) * ow + ox];
                if g == 0.0 {
                    continue;
                }
                for ic in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            let kv = kernels.data[((oc * c + ic) * kh + ky) * kw + kx];
                            out[(ic * h as usize + iy as usize) * w as usize + ix as usize] += g * kv;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(input_shape.to_vec(), out))
}

/// Gradient of `<signal, conv2d(input, K)>` with respect to the kernels `K`.
pub fn conv2d_kernel_grad(
    input: &Tensor,
    signal: &Tensor,
    kernel_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let geom = ConvGeometry { stride, padding };
    let out_shape = conv2d_output_shape(&input.shape, kernel_shape, geom)?;
    if signal.shape != out_shape {
        return Err(Error::Shape("kernel gradient signal shape mismatch".into()));
    }
    let (c, h, w) = (input.shape[0], input.shape[1] as isize, input.shape[2] as isize);
    let (o, kh, kw) = (kernel_shape[0], kernel_shape[2], kernel_shape[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let pad = padding as isize;
    let mut grad = vec![0.0; o * c * kh * kw];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = signal.data[(oc * oh + oy) * ow + ox];
                for ic in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            grad[((oc * c + ic) * kh + ky) * kw + kx] +=
                                g * input.data[(ic * h as usize + iy as usize) * w as usize + ix as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(kernel_shape.to_vec(), grad))
}

/// Output shape of a max-pool without evaluating it.
pub fn maxpool2d_output_shape(input: &[usize], window: usize, stride: usize) -> Result<Vec<usize>> {
    if input.len() != 3 {
        return Err(Error::Shape(format!("maxpool2d needs C×H×W input, got {input:?}")));
    }
    if window == 0 || stride == 0 {
        return Err(Error::Shape("maxpool window and stride must be positive".into()));
    }
    if window > input[1] || window > input[2] {
        return Err(Error::Shape(format!(
            "maxpool window {window} exceeds input {:?}",
            &input[1..]
        )));
    }
    Ok(vec![
        input[0],
        (input[1] - window) / stride + 1,
        (input[2] - window) / stride + 1,
    ])
}

/// Window maxima together with the flat input index each maximum came from.
/// Ties go to the lowest flat index.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let out_shape = maxpool2d_output_shape(&input.shape, window, stride)?;
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                for wy in 0..window {
                    for wx in 0..window {
                        let idx = (ch * h + oy * stride + wy) * w + ox * stride + wx;
                        if best == usize::MAX || input.data[idx] > input.data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(input.data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_parts_unchecked(out_shape, out), argmax))
}

/// Flat input indices covered by pooling window `out_index`, in ascending order.
pub(crate) fn maxpool2d_window(input_shape: &[usize], out_index: usize, window: usize, stride: usize) -> Vec<usize> {
    let (h, w) = (input_shape[1], input_shape[2]);
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let ch = out_index / (oh * ow);
    let oy = (out_index / ow) % oh;
    let ox = out_index % ow;
    let mut idx = Vec::with_capacity(window * window);
    for wy in 0..window {
        for wx in 0..window {
            idx.push((ch * h + oy * stride + wy) * w + ox * stride + wx);
        }
    }
    idx
}
