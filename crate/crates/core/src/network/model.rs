use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::layer::{softmax, Layer, LayerKind};

/// Which number counts as "the class score" y_c.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScoreMode {
    /// Softmax probability of the class.
    #[default]
    Softmax,
    /// Pre-softmax logit of the class.
    Logit,
}

impl ScoreMode {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMode::Softmax => "softmax",
            ScoreMode::Logit => "logit",
        }
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(ScoreMode::Softmax),
            "logit" => Ok(ScoreMode::Logit),
            other => Err(Error::Config(format!("unknown score mode `{other}`"))),
        }
    }
}

/// A validated feed-forward classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    class_count: usize,
}

impl Model {
    /// Checks shape compatibility of every consecutive layer pair.
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>) -> Result<Model> {
        if layers.is_empty() {
            return Err(Error::ModelFormat("model has no layers".into()));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::ModelFormat(format!("bad input shape {input_shape:?}")));
        }
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            if layer.kind() == LayerKind::Softmax && i + 1 != layers.len() {
                return Err(Error::ModelFormat("softmax is only supported as the final layer".into()));
            }
            for p in layer.parameters() {
                if !p.is_finite() {
                    return Err(Error::ModelFormat(format!("layer {i} has non-finite parameters")));
                }
            }
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::ModelFormat(format!("layer {i} ({}): {e}", layer.kind().name())))?;
        }
        let last = layers.last().map(Layer::kind);
        if !matches!(last, Some(LayerKind::Dense | LayerKind::Softmax)) || shape.len() != 1 {
            return Err(Error::ModelFormat(
                "the final layer must be dense or softmax producing a score vector".into(),
            ));
        }
        Ok(Model {
            layers,
            input_shape,
            class_count: shape[0],
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// Number of layers whose output is the logit vector (a trailing softmax is excluded).
    pub fn logit_depth(&self) -> usize {
        match self.layers.last().map(Layer::kind) {
            Some(LayerKind::Softmax) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    /// Indices of convolutional layers, in order.
    pub fn conv_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind() == LayerKind::Conv2d)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn forward(&self, input: &Tensor) -> Result<ForwardTrace> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "model expects input {:?}, got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        if !input.is_finite() {
            return Err(Error::NonFinite("model input".into()));
        }
        let mut records = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let (output, argmax) = layer.forward(&current)?;
            records.push(LayerRecord {
                input: current,
                output: output.clone(),
                argmax,
            });
            current = output;
        }
        Ok(ForwardTrace {
            records,
            logit_depth: self.logit_depth(),
        })
    }

    /// Convenience: forward then read off the class score.
    pub fn class_score(&self, input: &Tensor, class: usize, mode: ScoreMode) -> Result<f64> {
        self.check_class(class)?;
        Ok(self.forward(input)?.class_score(class, mode))
    }

    pub(crate) fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.class_count {
            return Err(Error::Range(format!(
                "class {class} out of range for {} classes",
                self.class_count
            )));
        }
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

/// Inputs and outputs of one layer during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecord {
    pub input: Tensor,
    pub output: Tensor,
    /// Flat argmax routing, present for max-pool layers only.
    pub argmax: Option<Vec<usize>>,
}

/// Everything a forward pass produced, layer by layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    records: Vec<LayerRecord>,
    logit_depth: usize,
}

impl ForwardTrace {
    pub fn records(&self) -> &[LayerRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn input(&self) -> &Tensor {
        &self.records[0].input
    }

    /// Final model output (probabilities when the model ends in softmax).
    pub fn output(&self) -> &Tensor {
        &self.records.last().expect("trace is never empty").output
    }

    pub fn logits(&self) -> &Tensor {
        &self.records[self.logit_depth - 1].output
    }

    pub(crate) fn logit_depth(&self) -> usize {
        self.logit_depth
    }

    pub fn predicted_class(&self) -> usize {
        self.output().argmax()
    }

    pub fn class_score(&self, class: usize, mode: ScoreMode) -> f64 {
        match mode {
            ScoreMode::Logit => self.logits().data()[class],
            ScoreMode::Softmax => {
                if self.logit_depth < self.records.len() {
                    self.output().data()[class]
                } else {
                    softmax(self.logits().data())[class]
                }
            }
        }
    }
}
