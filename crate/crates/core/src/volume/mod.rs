//! Volumetric data model: scalar volumes, labelled region masks and dense
//! displacement fields, plus their on-disk formats and a phantom generator.

mod manifest;
mod nifti;
mod phantom;
mod raw;

use std::collections::BTreeMap;
use std::ops::Index;

use crate::autograd::NdArray;
use crate::error::{Error, Result};

pub use manifest::{CohortLabel, CohortManifest, ManifestEntry};
pub use nifti::load_nifti;
pub use phantom::{generate_phantom, Phantom, PhantomSpec, REGION_NAMES};
pub use raw::{load_field, load_mask, load_raw_volume, save_field, save_mask, save_volume};

/// Smallest extent along any axis accepted for a [`Volume`].
pub const MIN_EXTENT: usize = 4;

#[inline]
pub(crate) fn linear_index(shape: [usize; 3], z: usize, y: usize, x: usize) -> usize {
    (z * shape[1] + y) * shape[2] + x
}

/// Dense 3-D scalar grid, depth-major row-major, with voxel spacing in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    data: Vec<f32>,
    shape: [usize; 3],
    spacing: [f32; 3],
}

impl Volume {
    pub fn new(shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&s| s < MIN_EXTENT) {
            return Err(Error::Shape(format!("volume extents must be >= {MIN_EXTENT}, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume".into()));
        }
        Ok(Self {
            data,
            shape,
            spacing: [1.0; 3],
        })
    }

    pub fn zeros(shape: [usize; 3]) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn from_fn(shape: [usize; 3], f: impl Fn(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.iter().product());
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Self::new(shape, data)
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[linear_index(self.shape, z, y, x)]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Ok(Self::new(self.shape, self.data.iter().map(|&v| f(v)).collect())?.with_spacing(self.spacing))
    }

    pub fn zip_map(&self, other: &Volume, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::new(self.shape, data)?.with_spacing(self.spacing))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// View as a `[1, 1, D, H, W]` array.
    pub fn to_array(&self) -> NdArray<f32> {
        let [d, h, w] = self.shape;
        NdArray::from_vec(&[1, 1, d, h, w], self.data.clone()).expect("volume shape")
    }

    /// Extracts channel `channel` of sample `sample` from a 5-D array.
    pub fn from_array(arr: &NdArray<f32>, sample: usize, channel: usize) -> Result<Self> {
        let [n, c, d, h, w] = match arr.shape() {
            &[n, c, d, h, w] => [n, c, d, h, w],
            s => return Err(Error::Shape(format!("expected 5-D array, got {s:?}"))),
        };
        if sample >= n || channel >= c {
            return Err(Error::Shape(format!("sample {sample} / channel {channel} outside {:?}", arr.shape())));
        }
        let vox = d * h * w;
        let start = (sample * c + channel) * vox;
        Self::new([d, h, w], arr.data()[start..start + vox].to_vec())
    }
}

impl Index<[usize; 3]> for Volume {
    type Output = f32;

    fn index(&self, [z, y, x]: [usize; 3]) -> &f32 {
        &self.data[linear_index(self.shape, z, y, x)]
    }
}

/// Stacks volumes of equal shape into a `[N, 1, D, H, W]` batch.
pub fn batch_array(volumes: &[&Volume]) -> Result<NdArray<f32>> {
    let first = volumes.first().ok_or_else(|| Error::Empty("empty batch".into()))?;
    let shape = first.shape();
    let mut data = Vec::with_capacity(volumes.len() * first.len());
    for v in volumes {
        if v.shape() != shape {
            return Err(Error::Shape(format!("batch mixes {:?} and {:?}", shape, v.shape())));
        }
        data.extend_from_slice(v.data());
    }
    NdArray::from_vec(&[volumes.len(), 1, shape[0], shape[1], shape[2]], data)
}

/// Integer label grid with a label -> region-name legend. Label 0 is
/// background.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    labels: Vec<u16>,
    shape: [usize; 3],
    legend: BTreeMap<u16, String>,
}

impl RegionMask {
    pub fn new(shape: [usize; 3], labels: Vec<u16>, legend: BTreeMap<u16, String>) -> Result<Self> {
        if labels.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!("mask shape {shape:?} vs {} labels", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l != 0 && !legend.contains_key(&l)) {
            return Err(Error::Format(format!("label {bad} missing from legend")));
        }
        Ok(Self { labels, shape, legend })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn legend(&self) -> &BTreeMap<u16, String> {
        &self.legend
    }

    pub fn label_of(&self, name: &str) -> Option<u16> {
        self.legend.iter().find(|(_, n)| n.as_str() == name).map(|(&l, _)| l)
    }

    pub fn count(&self, label: u16) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> u16 {
        self.labels[linear_index(self.shape, z, y, x)]
    }

    /// Boolean membership grid of one label.
    pub fn region(&self, label: u16) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }

    /// Any nonzero label.
    pub fn foreground(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != 0).collect()
    }
}

/// Dense displacement field in voxel units, `3 x D x H x W`, component
/// order (depth, height, width). Pull convention: a warp reads the source
/// at `p + u(p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    data: Vec<f32>,
    shape: [usize; 3],
}

impl DeformationField {
    pub fn new(shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let vox: usize = shape.iter().product();
        if vox == 0 || data.len() != 3 * vox {
            return Err(Error::Shape(format!("field of shape {shape:?} needs {} values, got {}", 3 * vox, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("deformation field".into()));
        }
        Ok(Self { data, shape })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            data: vec![0.0; 3 * shape.iter().product::<usize>()],
            shape,
        }
    }

    pub fn from_fn(shape: [usize; 3], f: impl Fn(usize, usize, usize) -> [f32; 3]) -> Result<Self> {
        let vox: usize = shape.iter().product();
        let mut data = vec![0.0; 3 * vox];
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    let p = linear_index(shape, z, y, x);
                    let u = f(z, y, x);
                    for a in 0..3 {
                        data[a * vox + p] = u[a];
                    }
                }
            }
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn component(&self, axis: usize) -> &[f32] {
        let vox = self.data.len() / 3;
        &self.data[axis * vox..(axis + 1) * vox]
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> [f32; 3] {
        let vox = self.data.len() / 3;
        let p = linear_index(self.shape, z, y, x);
        [self.data[p], self.data[vox + p], self.data[2 * vox + p]]
    }

    /// Euclidean displacement length per voxel.
    pub fn magnitudes(&self) -> Vec<f32> {
        let vox = self.data.len() / 3;
        (0..vox)
            .map(|p| {
                let (a, b, c) = (self.data[p], self.data[vox + p], self.data[2 * vox + p]);
                (a * a + b * b + c * c).sqrt()
            })
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// View as a `[1, 3, D, H, W]` array.
    pub fn to_array(&self) -> NdArray<f32> {
        let [d, h, w] = self.shape;
        NdArray::from_vec(&[1, 3, d, h, w], self.data.clone()).expect("field shape")
    }

    pub fn from_array(arr: &NdArray<f32>, sample: usize) -> Result<Self> {
        let [n, c, d, h, w] = match arr.shape() {
            &[n, c, d, h, w] => [n, c, d, h, w],
            s => return Err(Error::Shape(format!("expected 5-D array, got {s:?}"))),
        };
        if c != 3 || sample >= n {
            return Err(Error::Shape(format!("cannot take field {sample} from {:?}", arr.shape())));
        }
        let len = 3 * d * h * w;
        Self::new([d, h, w], arr.data()[sample * len..(sample + 1) * len].to_vec())
    }
}

/// Nearest-rank percentile (`rank = round(p/100 * (n-1))` over the sorted
/// values).
pub fn percentile(values: &[f32], pct: f64) -> f32 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    percentile_sorted(&sorted, pct)
}

fn percentile_sorted(sorted: &[f32], pct: f64) -> f32 {
    let rank = (pct / 100.0 * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

pub const DEFAULT_PERCENTILES: (f64, f64) = (0.5, 99.5);

/// Maps the `lo_pct` percentile to 0 and the `hi_pct` percentile to 1, then
/// clamps to `[0, 1]`.
pub fn normalize_intensity(v: &Volume, lo_pct: f64, hi_pct: f64) -> Result<Volume> {
    if !(0.0..100.0).contains(&lo_pct) || !(lo_pct < hi_pct && hi_pct <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentiles must satisfy 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})"
        )));
    }
    let mut sorted = v.data.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = percentile_sorted(&sorted, lo_pct);
    let hi = percentile_sorted(&sorted, hi_pct);
    if hi <= lo {
        return Err(Error::DegenerateIntensity { lo, hi });
    }
    let range = (hi - lo) as f64;
    v.map(|x| (((x - lo) as f64) / range).clamp(0.0, 1.0) as f32)
}
