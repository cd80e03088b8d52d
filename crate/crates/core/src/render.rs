//! 8-bit slice images: grayscale PGM (`P5`) and anomaly overlays as PPM
//! (`P6`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::Volume;

/// A 2-D slice, row-major, with its `(width, height)`.
struct Slice {
    values: Vec<f32>,
    width: usize,
    height: usize,
}

fn slice(v: &Volume, axis: usize, index: usize) -> Result<Slice> {
    let [d, h, w] = v.shape();
    if axis > 2 {
        return Err(Error::InvalidArgument(format!("axis {axis} (expected 0, 1 or 2)")));
    }
    let extent = v.shape()[axis];
    if index >= extent {
        return Err(Error::IndexOutOfRange { axis, index, extent });
    }
    let (rows, cols) = match axis {
        0 => (h, w),
        1 => (d, w),
        _ => (d, h),
    };
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            values.push(match axis {
                0 => v.get(index, r, c),
                1 => v.get(r, index, c),
                _ => v.get(r, c, index),
            });
        }
    }
    Ok(Slice {
        values,
        width: cols,
        height: rows,
    })
}

/// Maps the volume's `[min, max]` to `[0, 255]`; a constant volume maps to
/// mid gray.
fn to_bytes(values: &[f32], lo: f32, hi: f32) -> Vec<u8> {
    values
        .iter()
        .map(|&x| {
            if hi > lo {
                (((x - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                128
            }
        })
        .collect()
}

fn write(path: &Path, bytes: Vec<u8>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn pgm_bytes(v: &Volume, axis: usize, index: usize) -> Result<Vec<u8>> {
    let s = slice(v, axis, index)?;
    let (lo, hi) = v.min_max();
    let mut out = format!("P5\n{} {}\n255\n", s.width, s.height).into_bytes();
    out.extend(to_bytes(&s.values, lo, hi));
    Ok(out)
}

/// Grayscale slice through `axis` at `index`, min-max scaled over the
/// whole volume.
pub fn render_slice(v: &Volume, axis: usize, index: usize, path: &Path) -> Result<()> {
    write(path, pgm_bytes(v, axis, index)?)
}

pub fn overlay_bytes(base: &Volume, anomaly: &Volume, axis: usize, index: usize) -> Result<Vec<u8>> {
    if base.shape() != anomaly.shape() {
        return Err(Error::Shape(format!("overlay {:?} vs base {:?}", anomaly.shape(), base.shape())));
    }
    let b = slice(base, axis, index)?;
    let a = slice(anomaly, axis, index)?;
    let (lo, hi) = base.min_max();
    let gray = to_bytes(&b.values, lo, hi);
    let peak = anomaly.min_max().1.max(0.0);
    let mut out = format!("P6\n{} {}\n255\n", b.width, b.height).into_bytes();
    for (&g, &v) in gray.iter().zip(&a.values) {
        let t = if peak > 0.0 { (v.max(0.0) / peak).min(1.0) } else { 0.0 };
        let g = g as f32;
        out.push((g + (255.0 - g) * t).round() as u8);
        out.push((g * (1.0 - 0.5 * t)).round() as u8);
        out.push((g * (1.0 - t)).round() as u8);
    }
    Ok(out)
}

/// Grayscale base with the anomaly map (scaled by its maximum) pushed into
/// the red channel.
pub fn render_overlay(base: &Volume, anomaly: &Volume, axis: usize, index: usize, path: &Path) -> Result<()> {
    write(path, overlay_bytes(base, anomaly, axis, index)?)
}
