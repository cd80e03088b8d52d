//! `<name>.f32raw` payload (little-endian f32, depth-major row-major) plus a
//! `<name>.json` sidecar carrying `shape`, `spacing` and optionally `kind`
//! and a label `legend`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DeformationField, RegionMask, Volume};

const KIND_VOLUME: &str = "volume";
const KIND_MASK: &str = "region_mask";
const KIND_FIELD: &str = "displacement_voxels";

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    shape: Vec<usize>,
    #[serde(default = "unit_spacing")]
    spacing: [f32; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    legend: Option<BTreeMap<String, String>>,
}

fn unit_spacing() -> [f32; 3] {
    [1.0; 3]
}

fn paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("f32raw"), path.with_extension("json"))
}

fn write_pair(path: &Path, sidecar: &Sidecar, values: &[f32]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(path.display().to_string()));
    }
    let (raw, json) = paths(path);
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    let text = serde_json::to_string_pretty(sidecar)?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

fn read_pair(path: &Path) -> Result<(Sidecar, Vec<f32>)> {
    let (raw, json) = paths(path);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", json.display())))?;
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let expected = 4 * sidecar.shape.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::PayloadSizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(raw.display().to_string()));
    }
    Ok((sidecar, values))
}

fn shape3(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        &[d, h, w] => Ok([d, h, w]),
        other => Err(Error::Format(format!("expected a 3-element shape, got {other:?}"))),
    }
}

pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    let sidecar = Sidecar {
        shape: v.shape().to_vec(),
        spacing: v.spacing(),
        kind: Some(KIND_VOLUME.into()),
        legend: None,
    };
    write_pair(path, &sidecar, v.data())
}

pub fn load_raw_volume(path: &Path) -> Result<Volume> {
    let (sidecar, values) = read_pair(path)?;
    let shape = shape3(&sidecar.shape)?;
    Ok(Volume::new(shape, values)?.with_spacing(sidecar.spacing))
}

pub fn save_mask(mask: &RegionMask, path: &Path) -> Result<()> {
    let legend = mask.legend().iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    let sidecar = Sidecar {
        shape: mask.shape().to_vec(),
        spacing: unit_spacing(),
        kind: Some(KIND_MASK.into()),
        legend: Some(legend),
    };
    let values: Vec<f32> = mask.labels().iter().map(|&l| l as f32).collect();
    write_pair(path, &sidecar, &values)
}

pub fn load_mask(path: &Path) -> Result<RegionMask> {
    let (sidecar, values) = read_pair(path)?;
    let shape = shape3(&sidecar.shape)?;
    let mut legend = BTreeMap::new();
    for (k, v) in sidecar.legend.unwrap_or_default() {
        let label: u16 = k.parse().map_err(|_| Error::Format(format!("legend key '{k}' is not a label")))?;
        legend.insert(label, v);
    }
    let mut labels = Vec::with_capacity(values.len());
    for v in values {
        if v < 0.0 || v.fract() != 0.0 || v > u16::MAX as f32 {
            return Err(Error::Format(format!("mask value {v} is not a label")));
        }
        labels.push(v as u16);
    }
    RegionMask::new(shape, labels, legend)
}

pub fn save_field(field: &DeformationField, path: &Path) -> Result<()> {
    let [d, h, w] = field.shape();
    let sidecar = Sidecar {
        shape: vec![3, d, h, w],
        spacing: unit_spacing(),
        kind: Some(KIND_FIELD.into()),
        legend: None,
    };
    write_pair(path, &sidecar, field.data())
}

pub fn load_field(path: &Path) -> Result<DeformationField> {
    let (sidecar, values) = read_pair(path)?;
    if sidecar.kind.as_deref() != Some(KIND_FIELD) {
        return Err(Error::Format(format!("{} is not a displacement field", path.display())));
    }
    match sidecar.shape.as_slice() {
        &[3, d, h, w] => DeformationField::new([d, h, w], values),
        other => Err(Error::Format(format!("field shape must be [3, D, H, W], got {other:?}"))),
    }
}
