//! Model manifest (versioned JSON) plus a little-endian `f32` weight blob.
//!
//! ```json
//! { "version": 1, "input_shape": [1, 12, 12], "class_count": 3,
//!   "weights": "desk.bin",
//!   "layers": [ { "kind": "conv2d", "kernel_shape": [6, 1, 3, 3], "stride": 1,
//!                 "padding": 1, "weight_offset": 0, "bias_offset": 216 }, ... ] }
//! ```
//!
//! Offsets are in bytes from the start of the blob. Weights are widened to
//! `f64` on load and narrowed back to `f32` on save.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::layer::Layer;
use super::model::Model;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    input_shape: Vec<usize>,
    class_count: usize,
    weights: String,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerSpec {
    Dense {
        weight_shape: [usize; 2],
        weight_offset: u64,
        bias_offset: u64,
    },
    Conv2d {
        kernel_shape: [usize; 4],
        stride: usize,
        padding: usize,
        weight_offset: u64,
        bias_offset: u64,
    },
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    Softmax,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: Option<u32>,
}

fn read_span(blob: &[u8], offset: u64, count: usize, what: &str) -> Result<Vec<f64>> {
    if !offset.is_multiple_of(4) {
        return Err(Error::ModelFormat(format!("{what}: offset {offset} is not 4-byte aligned")));
    }
    let start = offset as usize;
    let end = start
        .checked_add(count * 4)
        .ok_or_else(|| Error::ModelFormat(format!("{what}: offset overflow")))?;
    if end > blob.len() {
        return Err(Error::ModelFormat(format!(
            "{what}: needs bytes {start}..{end} but the blob holds {} bytes ({} floats)",
            blob.len(),
            blob.len() / 4
        )));
    }
    let values: Vec<f64> = blob[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::ModelFormat(format!("{what}: non-finite weight")));
    }
    Ok(values)
}

pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<Model> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let probe: VersionProbe =
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(format!("manifest: {e}")))?;
    match probe.version {
        Some(MANIFEST_VERSION) => {}
        Some(found) => {
            return Err(Error::Version {
                what: "model manifest",
                found: found.to_string(),
                expected: MANIFEST_VERSION,
            })
        }
        None => return Err(Error::ModelFormat("manifest lacks a version field".into())),
    }
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(format!("manifest: {e}")))?;
    let blob_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.weights);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() % 4 != 0 {
        return Err(Error::ModelFormat("weight blob length is not a multiple of 4".into()));
    }

    let mut used = 0usize;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, spec) in manifest.layers.iter().enumerate() {
        let layer = match spec {
            LayerSpec::Dense {
                weight_shape,
                weight_offset,
                bias_offset,
            } => {
                let [out, inp] = *weight_shape;
                let w = read_span(&blob, *weight_offset, out * inp, &format!("layer {i} weight"))?;
                let b = read_span(&blob, *bias_offset, out, &format!("layer {i} bias"))?;
                used += (w.len() + b.len()) * 4;
                Layer::dense(Tensor::new(vec![out, inp], w)?, Tensor::new(vec![out], b)?)?
            }
            LayerSpec::Conv2d {
                kernel_shape,
                stride,
                padding,
                weight_offset,
                bias_offset,
            } => {
                let n: usize = kernel_shape.iter().product();
                let w = read_span(&blob, *weight_offset, n, &format!("layer {i} kernels"))?;
                let b = read_span(&blob, *bias_offset, kernel_shape[0], &format!("layer {i} bias"))?;
                used += (w.len() + b.len()) * 4;
                Layer::conv2d(
                    Tensor::new(kernel_shape.to_vec(), w)?,
                    Tensor::new(vec![kernel_shape[0]], b)?,
                    *stride,
                    *padding,
                )?
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool2d { window, stride } => Layer::MaxPool2d {
                window: *window,
                stride: *stride,
            },
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Softmax => Layer::Softmax,
        };
        layers.push(layer);
    }
    if used != blob.len() {
        return Err(Error::ModelFormat(format!(
            "manifest describes {} floats but the blob holds {}",
            used / 4,
            blob.len() / 4
        )));
    }
    let model = Model::new(layers, manifest.input_shape)?;
    if model.class_count() != manifest.class_count {
        return Err(Error::ModelFormat(format!(
            "manifest declares {} classes, layers produce {}",
            manifest.class_count,
            model.class_count()
        )));
    }
    Ok(model)
}

fn push_f32(blob: &mut Vec<u8>, t: &Tensor) -> u64 {
    let offset = blob.len() as u64;
    for &v in t.data() {
        blob.extend_from_slice(&(v as f32).to_le_bytes());
    }
    offset
}

/// Writes `manifest_path` and a sibling `<stem>.bin` weight blob.
pub fn save_model(model: &Model, manifest_path: impl AsRef<Path>) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad manifest path {}", manifest_path.display())))?;
    let blob_name = format!("{stem}.bin");
    let mut blob = Vec::new();
    let mut specs = Vec::with_capacity(model.layers().len());
    for layer in model.layers() {
        specs.push(match layer {
            Layer::Dense { weight, bias } => LayerSpec::Dense {
                weight_shape: [weight.shape()[0], weight.shape()[1]],
                weight_offset: push_f32(&mut blob, weight),
                bias_offset: push_f32(&mut blob, bias),
            },
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
            } => {
                let s = kernels.shape();
                LayerSpec::Conv2d {
                    kernel_shape: [s[0], s[1], s[2], s[3]],
                    stride: *stride,
                    padding: *padding,
                    weight_offset: push_f32(&mut blob, kernels),
                    bias_offset: push_f32(&mut blob, bias),
                }
            }
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool2d { window, stride } => LayerSpec::MaxPool2d {
                window: *window,
                stride: *stride,
            },
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Softmax => LayerSpec::Softmax,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        input_shape: model.input_shape().to_vec(),
        class_count: model.class_count(),
        weights: blob_name.clone(),
        layers: specs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(manifest_path, text + "\n").map_err(|e| Error::io(manifest_path, e))?;
    let blob_path: PathBuf = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(blob_name);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))
}
