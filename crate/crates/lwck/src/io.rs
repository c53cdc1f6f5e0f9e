//! File formats: the LWTN binary tensor container, JSON manifest/plan
//! documents, and the predictions CSV. All writers go through a temp file in
//! the target directory and rename into place.
//!
//! LWTN layout (little-endian): magic "LWTN"; version byte (1); dtype byte
//! (0 = f32, 1 = f64); ndim byte; reserved zero byte; ndim × u64 dims;
//! row-major payload. 32-bit payloads widen to f64 in memory.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{CalibrationError, PredictionSet, ReliabilityRecord};
use crate::conv::ConvLayerSpec;
use crate::planner::{CompressionPlan, ManifestLayer, ModelManifest, PlanError};
use crate::tensor::{DenseTensor, TensorError};

pub const TENSOR_MAGIC: [u8; 4] = *b"LWTN";
pub const TENSOR_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("bad magic {0:?}, expected \"LWTN\"")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor format version {found}, expected {TENSOR_VERSION}")]
    VersionMismatch { found: u8 },
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("tensor dims {dims:?} overflow the addressable size")]
    DimOverflow { dims: Vec<u64> },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("layer '{layer}': {source}")]
    LayerWeights {
        layer: String,
        #[source]
        source: Box<IoError>,
    },
    #[error("line {line}: {message}")]
    CsvRow { line: usize, message: String },
    #[error("missing or malformed header: expected \"p_hat,label[,logit]\"")]
    CsvHeader,
    #[error("unknown field '{field}' at {path}")]
    UnknownField { path: String, field: String },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Scalar width of a tensor payload on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let wrap = |source: std::io::Error| IoError::File {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir),
        None => tempfile::NamedTempFile::new_in("."),
    }
    .map_err(wrap)?;
    tmp.write_all(bytes).map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

/// Serialize a tensor; `dtype` controls the on-disk scalar width (the
/// default writer uses 64-bit).
pub fn encode_tensor(t: &DenseTensor, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + t.order() * 8 + t.len() * dtype.size());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(dtype.code());
    out.push(t.order() as u8);
    out.push(0);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        Dtype::F64 => {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Dtype::F32 => {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<DenseTensor, IoError> {
    if bytes.len() < 8 {
        return Err(IoError::Truncated {
            expected: 8,
            got: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("sliced four bytes");
    if magic != TENSOR_MAGIC {
        return Err(IoError::BadMagic(magic));
    }
    if bytes[4] != TENSOR_VERSION {
        return Err(IoError::VersionMismatch { found: bytes[4] });
    }
    let dtype = match bytes[5] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(IoError::BadDtype(other)),
    };
    let ndim = bytes[6] as usize;
    let header_len = 8 + ndim * 8;
    if bytes.len() < header_len {
        return Err(IoError::Truncated {
            expected: header_len,
            got: bytes.len(),
        });
    }
    let mut dims64 = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let start = 8 + i * 8;
        dims64.push(u64::from_le_bytes(
            bytes[start..start + 8]
                .try_into()
                .expect("sliced eight bytes"),
        ));
    }
    let mut count: usize = 1;
    let mut dims = Vec::with_capacity(ndim);
    for &d in &dims64 {
        let d_usize = usize::try_from(d).map_err(|_| IoError::DimOverflow {
            dims: dims64.clone(),
        })?;
        count = count
            .checked_mul(d_usize)
            .ok_or_else(|| IoError::DimOverflow {
                dims: dims64.clone(),
            })?;
        dims.push(d_usize);
    }
    let expected = header_len
        + count
            .checked_mul(dtype.size())
            .ok_or_else(|| IoError::DimOverflow {
                dims: dims64.clone(),
            })?;
    if bytes.len() < expected {
        return Err(IoError::Truncated {
            expected,
            got: bytes.len(),
        });
    }
    let payload = &bytes[header_len..expected];
    let data: Vec<f64> = match dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight-byte chunk")))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four-byte chunk")) as f64)
            .collect(),
    };
    Ok(DenseTensor::new(dims, data)?)
}

pub fn write_tensor(t: &DenseTensor, path: impl AsRef<Path>) -> Result<(), IoError> {
    atomic_write(path.as_ref(), &encode_tensor(t, Dtype::F64))
}

pub fn write_tensor_with_dtype(
    t: &DenseTensor,
    path: impl AsRef<Path>,
    dtype: Dtype,
) -> Result<(), IoError> {
    atomic_write(path.as_ref(), &encode_tensor(t, dtype))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor, IoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    decode_tensor(&bytes)
}

/// One manifest entry: the layer spec plus the path of its weight file,
/// relative to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub spec: ConvLayerSpec,
    pub weights: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestFile {
    pub layers: Vec<ManifestEntry>,
}

const MANIFEST_LAYER_FIELDS: &[&str] = &[
    "name",
    "in_channels",
    "out_channels",
    "kernel_size",
    "stride",
    "padding",
    "groups",
    "input_hw",
    "weights",
];
const SPEC_FIELDS: &[&str] = &[
    "name",
    "in_channels",
    "out_channels",
    "kernel_size",
    "stride",
    "padding",
    "groups",
    "input_hw",
];
const PLAN_LAYER_FIELDS: &[&str] = &[
    "name",
    "method",
    "rank",
    "params_before",
    "params_after",
    "flops_before",
    "flops_after",
    "speedup",
    "kernel_rel_error",
    "skip_reason",
    "sub_layers",
];
const SUBLAYER_FIELDS: &[&str] = &["name", "kind", "spec", "params", "flops", "weights_path"];
const TOTALS_FIELDS: &[&str] = &[
    "params_before",
    "params_after",
    "flops_before",
    "flops_after",
    "speedup",
];

fn collect_unknown_fields(
    value: &serde_json::Value,
    path: &str,
    allowed: &[&str],
    unknown: &mut Vec<(String, String)>,
) {
    if let serde_json::Value::Object(map) = value {
        let allowed: BTreeSet<&str> = allowed.iter().copied().collect();
        for key in map.keys() {
            if !allowed.contains(key.as_str()) {
                unknown.push((path.to_string(), key.clone()));
            }
        }
    }
}

fn check_manifest_fields(value: &serde_json::Value) -> Vec<(String, String)> {
    let mut unknown = Vec::new();
    collect_unknown_fields(value, "$", &["layers"], &mut unknown);
    if let Some(layers) = value.get("layers").and_then(|l| l.as_array()) {
        for (i, layer) in layers.iter().enumerate() {
            collect_unknown_fields(
                layer,
                &format!("$.layers[{i}]"),
                MANIFEST_LAYER_FIELDS,
                &mut unknown,
            );
        }
    }
    unknown
}

fn check_plan_fields(value: &serde_json::Value) -> Vec<(String, String)> {
    let mut unknown = Vec::new();
    collect_unknown_fields(value, "$", &["layers", "totals"], &mut unknown);
    if let Some(layers) = value.get("layers").and_then(|l| l.as_array()) {
        for (i, layer) in layers.iter().enumerate() {
            let lp = format!("$.layers[{i}]");
            collect_unknown_fields(layer, &lp, PLAN_LAYER_FIELDS, &mut unknown);
            if let Some(subs) = layer.get("sub_layers").and_then(|s| s.as_array()) {
                for (j, sub) in subs.iter().enumerate() {
                    let sp = format!("{lp}.sub_layers[{j}]");
                    collect_unknown_fields(sub, &sp, SUBLAYER_FIELDS, &mut unknown);
                    if let Some(spec) = sub.get("spec") {
                        collect_unknown_fields(
                            spec,
                            &format!("{sp}.spec"),
                            SPEC_FIELDS,
                            &mut unknown,
                        );
                    }
                }
            }
        }
    }
    if let Some(totals) = value.get("totals") {
        collect_unknown_fields(totals, "$.totals", TOTALS_FIELDS, &mut unknown);
    }
    unknown
}

fn handle_unknown(
    unknown: Vec<(String, String)>,
    strict: bool,
    warnings: &mut Vec<String>,
) -> Result<(), IoError> {
    for (path, field) in unknown {
        if strict {
            return Err(IoError::UnknownField { path, field });
        }
        warnings.push(format!("ignoring unknown field '{field}' at {path}"));
    }
    Ok(())
}

/// Parse a manifest document. Unknown fields fail in strict mode and are
/// returned as warnings otherwise.
pub fn parse_manifest(text: &str, strict: bool) -> Result<(ManifestFile, Vec<String>), IoError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let mut warnings = Vec::new();
    handle_unknown(check_manifest_fields(&value), strict, &mut warnings)?;
    let manifest: ManifestFile = serde_json::from_value(value)?;
    Ok((manifest, warnings))
}

pub fn read_manifest(
    path: impl AsRef<Path>,
    strict: bool,
) -> Result<(ManifestFile, Vec<String>), IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text, strict)
}

pub fn write_manifest(manifest: &ManifestFile, path: impl AsRef<Path>) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(manifest)?;
    atomic_write(path.as_ref(), text.as_bytes())
}

/// Load a manifest and its weight files into an in-memory model. Relative
/// weight paths resolve against the manifest's directory.
pub fn load_model(manifest_path: impl AsRef<Path>, strict: bool) -> Result<ModelManifest, IoError> {
    let manifest_path = manifest_path.as_ref();
    let (manifest, _) = read_manifest(manifest_path, strict)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in manifest.layers {
        let weight_path = base.join(&entry.weights);
        let weights = read_tensor(&weight_path).map_err(|e| IoError::LayerWeights {
            layer: entry.spec.name.clone(),
            source: Box::new(e),
        })?;
        layers.push(ManifestLayer {
            spec: entry.spec,
            weights,
        });
    }
    Ok(ModelManifest::new(layers)?)
}

/// Parse a plan document, with the same unknown-field policy as manifests.
pub fn parse_plan(text: &str, strict: bool) -> Result<(CompressionPlan, Vec<String>), IoError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let mut warnings = Vec::new();
    handle_unknown(check_plan_fields(&value), strict, &mut warnings)?;
    let plan: CompressionPlan = serde_json::from_value(value)?;
    Ok((plan, warnings))
}

pub fn read_plan(
    path: impl AsRef<Path>,
    strict: bool,
) -> Result<(CompressionPlan, Vec<String>), IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_plan(&text, strict)
}

pub fn write_plan(plan: &CompressionPlan, path: impl AsRef<Path>) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(plan)?;
    atomic_write(path.as_ref(), text.as_bytes())
}

/// Parse the predictions CSV: header `p_hat,label` or `p_hat,label,logit`,
/// one record per line. Errors carry 1-based line numbers.
pub fn parse_predictions(text: &str) -> Result<PredictionSet, IoError> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) if line.trim().is_empty() => continue,
            Some((_, line)) => break line.trim(),
            None => return Err(IoError::CsvHeader),
        }
    };
    let with_logits = match header {
        "p_hat,label" => false,
        "p_hat,label,logit" => true,
        _ => return Err(IoError::CsvHeader),
    };
    let mut p_hat = Vec::new();
    let mut labels = Vec::new();
    let mut logits = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        let expected = if with_logits { 3 } else { 2 };
        if fields.len() != expected {
            return Err(IoError::CsvRow {
                line: line_no,
                message: format!("expected {expected} fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64, IoError> {
            s.trim().parse::<f64>().map_err(|e| IoError::CsvRow {
                line: line_no,
                message: format!("bad {what} '{s}': {e}"),
            })
        };
        p_hat.push(parse(fields[0], "p_hat")?);
        labels.push(parse(fields[1], "label")?);
        if with_logits {
            logits.push(parse(fields[2], "logit")?);
        }
    }
    Ok(PredictionSet::new(
        p_hat,
        labels,
        with_logits.then_some(logits),
    )?)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionSet, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_predictions(&text)
}

pub fn write_predictions(preds: &PredictionSet, path: impl AsRef<Path>) -> Result<(), IoError> {
    let mut text = String::new();
    if let Some(logits) = preds.logits() {
        text.push_str("p_hat,label,logit\n");
        for ((p, l), z) in preds.p_hat().iter().zip(preds.labels()).zip(logits) {
            text.push_str(&format!("{p},{l},{z}\n"));
        }
    } else {
        text.push_str("p_hat,label\n");
        for (p, l) in preds.p_hat().iter().zip(preds.labels()) {
            text.push_str(&format!("{p},{l}\n"));
        }
    }
    atomic_write(path.as_ref(), text.as_bytes())
}

/// Reliability-diagram records as CSV, one row per nonempty bin.
pub fn write_reliability_csv(
    records: &[ReliabilityRecord],
    path: impl AsRef<Path>,
) -> Result<(), IoError> {
    let mut text = String::from("bin_midpoint,acc,conf,gap,count\n");
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.midpoint, r.acc, r.conf, r.gap, r.count
        ));
    }
    atomic_write(path.as_ref(), text.as_bytes())
}

/// Scientific notation with 4 significant digits: `2.118e-2`.
pub fn format_sci4(x: f64) -> String {
    format!("{:.3e}", x)
}

/// Plain decimal, 4 significant digits, truncated rather than rounded so a
/// ratio like 1.82999 prints as `1.829`.
pub fn format_sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (3 - magnitude).max(0) as usize;
    let scale = 10f64.powi(decimals as i32);
    let truncated = (x * scale).trunc() / scale;
    format!("{:.*}", decimals, truncated)
}
