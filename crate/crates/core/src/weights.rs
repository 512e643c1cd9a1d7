//! Weights and frames files: a one-line JSON header followed by a raw
//! little-endian scalar payload.
//!
//! The header names every tensor with its shape in payload order and records
//! a SHA-256 checksum of the payload, so files stay inspectable with a text
//! editor while the numbers round-trip bit for bit. Parse errors report the
//! byte offset and, for truncation, the first tensor that no longer fits.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{EncoderLayerParams, EncoderStack};
use crate::config::Precision;
use crate::error::{CcoError, Result};
use crate::tensor::{Matrix, Scalar};

pub const WEIGHTS_FORMAT: &str = "cco-weights";
pub const FRAMES_FORMAT: &str = "cco-frames";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    d_model: usize,
    head_count: usize,
    layer_count: usize,
    d_ff: usize,
    ln_eps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    precision: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<ModelMeta>,
    checksum_sha256: String,
    tensors: Vec<TensorMeta>,
}

fn sha256_hex(payload: &[u8]) -> String {
    let digest = Sha256::digest(payload);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

fn encode<S: Scalar>(
    header: &mut Header,
    payload: &mut Vec<u8>,
    name: &str,
    rows: usize,
    cols: usize,
    data: &[S],
) {
    header.tensors.push(TensorMeta {
        name: name.to_string(),
        rows,
        cols,
    });
    for &v in data {
        v.write_le(payload);
    }
}

fn write_file(path: &Path, mut header: Header, payload: Vec<u8>) -> Result<()> {
    header.checksum_sha256 = sha256_hex(&payload);
    let mut bytes = serde_json::to_vec(&header).map_err(|e| CcoError::Format {
        offset: 0,
        detail: format!("header serialization failed: {e}"),
    })?;
    bytes.push(b'\n');
    bytes.extend_from_slice(&payload);
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Tensor names of one layer, in payload order.
fn layer_tensor_names(layer: usize) -> [String; 10] {
    [
        format!("layers.{layer}.w_q"),
        format!("layers.{layer}.w_k"),
        format!("layers.{layer}.w_v"),
        format!("layers.{layer}.w_o"),
        format!("layers.{layer}.ffn_w1"),
        format!("layers.{layer}.ffn_w2"),
        format!("layers.{layer}.norm1_gain"),
        format!("layers.{layer}.norm1_bias"),
        format!("layers.{layer}.norm2_gain"),
        format!("layers.{layer}.norm2_bias"),
    ]
}

/// Write an encoder stack.
pub fn save_stack<S: Scalar>(path: impl AsRef<Path>, stack: &EncoderStack<S>) -> Result<()> {
    let mut header = Header {
        format: WEIGHTS_FORMAT.to_string(),
        version: FORMAT_VERSION,
        precision: S::PRECISION.as_str().to_string(),
        model: Some(ModelMeta {
            d_model: stack.d_model(),
            head_count: stack.head_count(),
            layer_count: stack.layer_count(),
            d_ff: stack.d_ff(),
            ln_eps: stack.ln_eps(),
        }),
        checksum_sha256: String::new(),
        tensors: Vec::new(),
    };
    let mut payload = Vec::new();
    let d = stack.d_model();
    for (i, layer) in stack.layers().iter().enumerate() {
        let names = layer_tensor_names(i);
        let d_ff = layer.d_ff();
        encode(&mut header, &mut payload, &names[0], d, d, layer.w_q.data());
        encode(&mut header, &mut payload, &names[1], d, d, layer.w_k.data());
        encode(&mut header, &mut payload, &names[2], d, d, layer.w_v.data());
        encode(&mut header, &mut payload, &names[3], d, d, layer.w_o.data());
        encode(
            &mut header,
            &mut payload,
            &names[4],
            d,
            d_ff,
            layer.ffn_w1.data(),
        );
        encode(
            &mut header,
            &mut payload,
            &names[5],
            d_ff,
            d,
            layer.ffn_w2.data(),
        );
        encode(
            &mut header,
            &mut payload,
            &names[6],
            1,
            d,
            &layer.norm1_gain,
        );
        encode(
            &mut header,
            &mut payload,
            &names[7],
            1,
            d,
            &layer.norm1_bias,
        );
        encode(
            &mut header,
            &mut payload,
            &names[8],
            1,
            d,
            &layer.norm2_gain,
        );
        encode(
            &mut header,
            &mut payload,
            &names[9],
            1,
            d,
            &layer.norm2_bias,
        );
    }
    write_file(path.as_ref(), header, payload)
}

/// Write a frame sequence.
pub fn save_frames<S: Scalar>(path: impl AsRef<Path>, frames: &Matrix<S>) -> Result<()> {
    let mut header = Header {
        format: FRAMES_FORMAT.to_string(),
        version: FORMAT_VERSION,
        precision: S::PRECISION.as_str().to_string(),
        model: None,
        checksum_sha256: String::new(),
        tensors: Vec::new(),
    };
    let mut payload = Vec::new();
    encode(
        &mut header,
        &mut payload,
        "frames",
        frames.rows(),
        frames.cols(),
        frames.data(),
    );
    write_file(path.as_ref(), header, payload)
}

struct ParsedFile {
    header: Header,
    payload: Vec<u8>,
    payload_offset: usize,
}

fn parse_file(path: &Path, expected_format: &str) -> Result<ParsedFile> {
    let bytes = std::fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CcoError::Format {
            offset: bytes.len(),
            detail: "no header line found".to_string(),
        })?;
    let header: Header =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| CcoError::Format {
            offset: e.column().saturating_sub(1),
            detail: format!("bad header: {e}"),
        })?;
    if header.format != expected_format {
        return Err(CcoError::Format {
            offset: 0,
            detail: format!(
                "format is `{}`, expected `{expected_format}`",
                header.format
            ),
        });
    }
    if header.version != FORMAT_VERSION {
        return Err(CcoError::Format {
            offset: 0,
            detail: format!("unsupported version {}", header.version),
        });
    }
    let payload_offset = newline + 1;
    let payload = bytes[payload_offset..].to_vec();
    Ok(ParsedFile {
        header,
        payload,
        payload_offset,
    })
}

/// Manifest-declared payload size check; a shortfall names the first tensor
/// that no longer fits. Runs before the checksum so a plainly cut-off file
/// reports what is missing rather than a digest mismatch.
fn check_payload_extent<S: Scalar>(file: &ParsedFile) -> Result<()> {
    let mut offset = 0usize;
    for meta in &file.header.tensors {
        let bytes = meta.rows * meta.cols * S::BYTES;
        if offset + bytes > file.payload.len() {
            return Err(CcoError::Format {
                offset: file.payload_offset + file.payload.len(),
                detail: format!(
                    "truncated payload: tensor `{}` needs {bytes} bytes at payload offset {offset}, {} available",
                    meta.name,
                    file.payload.len() - offset
                ),
            });
        }
        offset += bytes;
    }
    if offset != file.payload.len() {
        return Err(CcoError::Format {
            offset: file.payload_offset + offset,
            detail: format!(
                "{} bytes of payload beyond the declared manifest",
                file.payload.len() - offset
            ),
        });
    }
    Ok(())
}

fn check_checksum(file: &ParsedFile) -> Result<()> {
    let checksum = sha256_hex(&file.payload);
    if checksum != file.header.checksum_sha256 {
        return Err(CcoError::Format {
            offset: file.payload_offset,
            detail: format!(
                "payload checksum {checksum} does not match header {}",
                file.header.checksum_sha256
            ),
        });
    }
    Ok(())
}

fn check_precision<S: Scalar>(file: &ParsedFile) -> Result<()> {
    if file.header.precision != S::PRECISION.as_str() {
        return Err(CcoError::Format {
            offset: 0,
            detail: format!(
                "file precision is {}, requested {}",
                file.header.precision,
                S::PRECISION.as_str()
            ),
        });
    }
    Ok(())
}

/// Validate extent and checksum, then decode each declared tensor.
fn decode_tensors<S: Scalar>(file: &ParsedFile) -> Result<Vec<(TensorMeta, Vec<S>)>> {
    check_payload_extent::<S>(file)?;
    check_checksum(file)?;
    let mut out = Vec::with_capacity(file.header.tensors.len());
    let mut offset = 0usize;
    for meta in &file.header.tensors {
        let count = meta.rows * meta.cols;
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            data.push(S::read_le(&file.payload[offset + i * S::BYTES..]));
        }
        offset += count * S::BYTES;
        out.push((meta.clone(), data));
    }
    Ok(out)
}

/// Peek at a file's precision without decoding the payload.
pub fn peek_precision(path: impl AsRef<Path>) -> Result<Precision> {
    let bytes = std::fs::read(path.as_ref())?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CcoError::Format {
            offset: bytes.len(),
            detail: "no header line found".to_string(),
        })?;
    let header: Header =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| CcoError::Format {
            offset: e.column().saturating_sub(1),
            detail: format!("bad header: {e}"),
        })?;
    Precision::parse(&header.precision)
}

/// Load an encoder stack saved by [`save_stack`].
pub fn load_stack<S: Scalar>(path: impl AsRef<Path>) -> Result<EncoderStack<S>> {
    let file = parse_file(path.as_ref(), WEIGHTS_FORMAT)?;
    check_precision::<S>(&file)?;
    let model = file.header.model.clone().ok_or_else(|| CcoError::Format {
        offset: 0,
        detail: "weights file is missing model metadata".to_string(),
    })?;
    let tensors = decode_tensors::<S>(&file)?;
    if tensors.len() != model.layer_count * 10 {
        return Err(CcoError::Format {
            offset: 0,
            detail: format!(
                "manifest lists {} tensors for {} layers",
                tensors.len(),
                model.layer_count
            ),
        });
    }
    let mut layers = Vec::with_capacity(model.layer_count);
    for i in 0..model.layer_count {
        let names = layer_tensor_names(i);
        let base = i * 10;
        for (slot, expected) in names.iter().enumerate() {
            let meta = &tensors[base + slot].0;
            if &meta.name != expected {
                return Err(CcoError::Format {
                    offset: 0,
                    detail: format!(
                        "tensor {} is `{}`, expected `{expected}`",
                        base + slot,
                        meta.name
                    ),
                });
            }
        }
        let mat = |slot: usize| -> Result<Matrix<S>> {
            let (meta, data) = &tensors[base + slot];
            Matrix::from_vec(meta.rows, meta.cols, data.clone())
        };
        layers.push(EncoderLayerParams {
            w_q: mat(0)?,
            w_k: mat(1)?,
            w_v: mat(2)?,
            w_o: mat(3)?,
            ffn_w1: mat(4)?,
            ffn_w2: mat(5)?,
            norm1_gain: tensors[base + 6].1.clone(),
            norm1_bias: tensors[base + 7].1.clone(),
            norm2_gain: tensors[base + 8].1.clone(),
            norm2_bias: tensors[base + 9].1.clone(),
            head_count: model.head_count,
        });
    }
    EncoderStack::new(layers, model.d_model, model.ln_eps)
}

/// Load a frame sequence saved by [`save_frames`].
pub fn load_frames<S: Scalar>(path: impl AsRef<Path>) -> Result<Matrix<S>> {
    let file = parse_file(path.as_ref(), FRAMES_FORMAT)?;
    check_precision::<S>(&file)?;
    let tensors = decode_tensors::<S>(&file)?;
    let (meta, data) = tensors.into_iter().next().ok_or_else(|| CcoError::Format {
        offset: 0,
        detail: "frames file declares no tensors".to_string(),
    })?;
    Matrix::from_vec(meta.rows, meta.cols, data)
}
