//! Image files: binary PGM/PPM (P5/P6) and the raw-tensor format, a one-line
//! text header `rawtensor v1 C×H×W` followed by little-endian f32 values.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RAW_TENSOR_MAGIC: &str = "rawtensor";
pub const RAW_TENSOR_VERSION: u32 = 1;
/// File extensions picked up when scanning an image directory.
pub const IMAGE_EXTENSIONS: [&str; 4] = ["pgm", "ppm", "pnm", "rawt"];

/// Reads a P5/P6 or raw-tensor file into a C×H×W tensor. PNM values are
/// divided by the file's maxval; raw tensors are returned as stored.
pub fn load_image(path: impl AsRef<Path>, expected_shape: Option<&[usize]>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let t = decode_image(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    if let Some(shape) = expected_shape {
        if t.shape() != shape {
            return Err(Error::Shape(format!(
                "{}: image shape {:?}, model expects {:?}",
                path.display(),
                t.shape(),
                shape
            )));
        }
    }
    Ok(t)
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else if bytes.starts_with(RAW_TENSOR_MAGIC.as_bytes()) {
        decode_raw_tensor(bytes)
    } else {
        Err(Error::Format("unrecognized image header".into()))
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad or missing {what} in PNM header")))
    }
}

fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("invalid PNM header {width}×{height} max {maxval}")));
    }
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::Format("PNM header not followed by whitespace".into()));
    }
    let payload = &bytes[cur.pos + 1..];
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let count = width * height * channels;
    if payload.len() < count * sample_bytes {
        return Err(Error::Format(format!(
            "PNM payload has {} bytes, expected {}",
            payload.len(),
            count * sample_bytes
        )));
    }
    let sample = |i: usize| -> f64 {
        let v = if sample_bytes == 2 {
            u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]) as f64
        } else {
            payload[i] as f64
        };
        v / maxval as f64
    };
    let plane = width * height;
    let mut data = vec![0.0; count];
    for p in 0..plane {
        for c in 0..channels {
            data[c * plane + p] = sample(p * channels + c);
        }
    }
    Tensor::new(vec![channels, height, width], data)
}

fn decode_raw_tensor(bytes: &[u8]) -> Result<Tensor> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("raw tensor header has no newline".into()))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| Error::Format("raw tensor header is not text".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(RAW_TENSOR_MAGIC) {
        return Err(Error::Format("missing raw tensor magic".into()));
    }
    let version = parts
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| Error::Format("missing raw tensor version".into()))?;
    if version != RAW_TENSOR_VERSION {
        return Err(Error::Version {
            what: "raw tensor",
            found: version.to_string(),
            expected: RAW_TENSOR_VERSION,
        });
    }
    let dims = parts.next().ok_or_else(|| Error::Format("missing raw tensor shape".into()))?;
    if parts.next().is_some() {
        return Err(Error::Format("trailing fields in raw tensor header".into()));
    }
    let shape: Vec<usize> = dims
        .split('x')
        .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Format(format!("bad raw tensor shape {dims:?}")))?;
    let count: usize = shape.iter().product();
    let payload = &bytes[newline + 1..];
    if payload.len() != 4 * count {
        return Err(Error::Format(format!(
            "raw tensor payload has {} bytes, expected {}",
            payload.len(),
            4 * count
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new_finite(shape, data)
}

/// Raw-tensor bytes; values are narrowed to f32.
pub fn encode_raw_tensor(t: &Tensor) -> Vec<u8> {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    let mut out = format!("{RAW_TENSOR_MAGIC} v{RAW_TENSOR_VERSION} {}\n", dims.join("x")).into_bytes();
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_raw_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raw_tensor(t)).map_err(|e| Error::io(path, e))
}

/// 8-bit P5 (1 channel) or P6 (3 channels) bytes; values are clamped to [0, 1].
pub fn encode_pnm(t: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = match t.shape() {
        [h, w] => (1, *h, *w),
        [c @ (1 | 3), h, w] => (*c, *h, *w),
        s => return Err(Error::Shape(format!("cannot write shape {s:?} as PGM/PPM"))),
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            let v = t.data()[ch * plane + p];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_pnm(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(t)?).map_err(|e| Error::io(path, e))
}

/// Image files in a directory (or the file itself), sorted by path.
pub fn list_images(source: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let source = source.as_ref();
    if source.is_file() {
        return Ok(vec![source.to_path_buf()]);
    }
    let entries = fs::read_dir(source).map_err(|e| Error::io(source, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(source, e))?.path();
        let known = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if known && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// The identifier used in reports: the file stem.
pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
