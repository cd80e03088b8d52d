//! Warping, Jacobian-determinant analysis and folding maps.
//!
//! Fields follow the pull convention: the warped image at `p` samples the
//! source at `p + u(p)`, with `u` in voxels and component order
//! (depth, height, width).

pub(crate) mod sampling;

use crate::error::{Error, Result};
use crate::volume::{linear_index, Volume};

pub use crate::volume::DeformationField;

/// Trilinear pull-warp of `src` by `field`, clamping samples to the border.
pub fn warp(src: &Volume, field: &DeformationField) -> Result<Volume> {
    if src.shape() != field.shape() {
        return Err(Error::Shape(format!(
            "warp: source {:?} vs field {:?}",
            src.shape(),
            field.shape()
        )));
    }
    let out = sampling::warp_forward(src.data(), field.data(), src.shape(), 1);
    Ok(Volume::new(src.shape(), out)?.with_spacing(src.spacing()))
}

/// Per-voxel `det(I + grad u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianMap {
    det: Vec<f64>,
    shape: [usize; 3],
}

impl JacobianMap {
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.det
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.det[linear_index(self.shape, z, y, x)]
    }

    pub fn from_values(shape: [usize; 3], det: Vec<f64>) -> Result<Self> {
        if det.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!("{} determinants for shape {shape:?}", det.len())));
        }
        if det.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("jacobian".into()));
        }
        Ok(Self { det, shape })
    }
}

/// `max(0, -det)` per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldingMap {
    values: Vec<f64>,
    shape: [usize; 3],
}

impl FoldingMap {
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Total folding mass.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn to_volume(&self) -> Result<Volume> {
        Volume::new(self.shape, self.values.iter().map(|&v| v as f32).collect())
    }
}

/// Derivative of `comp` along `axis` at `p`: central in the interior,
/// one-sided on the faces.
fn partial(comp: &[f32], shape: [usize; 3], idx: [usize; 3], axis: usize) -> f64 {
    let n = shape[axis];
    let mut lo = idx;
    let mut hi = idx;
    let span = if idx[axis] == 0 {
        hi[axis] = 1;
        1.0
    } else if idx[axis] == n - 1 {
        lo[axis] = n - 2;
        1.0
    } else {
        lo[axis] -= 1;
        hi[axis] += 1;
        2.0
    };
    let a = comp[linear_index(shape, lo[0], lo[1], lo[2])] as f64;
    let b = comp[linear_index(shape, hi[0], hi[1], hi[2])] as f64;
    (b - a) / span
}

pub fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn jacobian_determinant(field: &DeformationField) -> Result<JacobianMap> {
    let shape = field.shape();
    if shape.iter().any(|&s| s < 3) {
        return Err(Error::Shape(format!("degenerate shape {shape:?}: every extent must be >= 3")));
    }
    let comps = [field.component(0), field.component(1), field.component(2)];
    let mut det = Vec::with_capacity(shape.iter().product());
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let mut j = [[0.0; 3]; 3];
                for (i, comp) in comps.iter().enumerate() {
                    for (a, row) in j[i].iter_mut().enumerate() {
                        *row = partial(comp, shape, [z, y, x], a) + if i == a { 1.0 } else { 0.0 };
                    }
                }
                det.push(det3(j));
            }
        }
    }
    JacobianMap::from_values(shape, det)
}

pub fn folding_map(jac: &JacobianMap) -> FoldingMap {
    FoldingMap {
        values: jac.det.iter().map(|&d| (-d).max(0.0)).collect(),
        shape: jac.shape,
    }
}
