//! Minimal single-file NIfTI-1 reader (`.nii`, uncompressed, 3-D, float32 or
//! int16). The file's x axis varies fastest, which is exactly the width axis
//! of the depth-major layout, so voxel data is copied without reordering.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::Volume;

const HEADER_SIZE: usize = 348;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

struct Reader<'a> {
    bytes: &'a [u8],
    little: bool,
}

impl Reader<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        if self.little {
            i16::from_le_bytes(b)
        } else {
            i16::from_be_bytes(b)
        }
    }

    fn i32(&self, off: usize) -> i32 {
        let b = [self.bytes[off], self.bytes[off + 1], self.bytes[off + 2], self.bytes[off + 3]];
        if self.little {
            i32::from_le_bytes(b)
        } else {
            i32::from_be_bytes(b)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_bits(self.i32(off) as u32)
    }
}

pub fn load_nifti(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::UnsupportedNifti(format!("file holds {} bytes, header needs {HEADER_SIZE}", bytes.len())));
    }
    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        let shown = String::from_utf8_lossy(&magic[..3]).into_owned();
        return Err(Error::UnsupportedNifti(format!("magic '{shown}' (only single-file \"n+1\" is read)")));
    }
    let le = i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let little = if le == HEADER_SIZE as i32 {
        true
    } else if i32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) == HEADER_SIZE as i32 {
        false
    } else {
        return Err(Error::UnsupportedNifti(format!("sizeof_hdr = {le}")));
    };
    let r = Reader { bytes, little };
    let ndim = r.i16(40);
    if ndim != 3 {
        return Err(Error::UnsupportedNifti(format!("dim[0] = {ndim}, only 3-D volumes are read")));
    }
    let nx = r.i16(42);
    let ny = r.i16(44);
    let nz = r.i16(46);
    if nx <= 0 || ny <= 0 || nz <= 0 {
        return Err(Error::UnsupportedNifti(format!("non-positive dims {nx}x{ny}x{nz}")));
    }
    let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
    let datatype = r.i16(70);
    let width = match datatype {
        DT_FLOAT32 => 4,
        DT_INT16 => 2,
        other => return Err(Error::UnsupportedNifti(format!("datatype {other}"))),
    };
    let spacing = [r.f32(88).abs(), r.f32(84).abs(), r.f32(80).abs()];
    let vox_offset = r.f32(108);
    if !(vox_offset >= 0.0) {
        return Err(Error::UnsupportedNifti(format!("vox_offset {vox_offset}")));
    }
    let offset = (vox_offset as usize).max(HEADER_SIZE);
    let mut slope = r.f32(112);
    let inter = r.f32(116);
    if slope == 0.0 || !slope.is_finite() {
        // per the format, slope 0 means "no scaling"
        slope = 1.0;
    }
    let inter = if inter.is_finite() { inter } else { 0.0 };
    let n = nx * ny * nz;
    let end = offset + n * width;
    if bytes.len() < end {
        return Err(Error::PayloadSizeMismatch {
            expected: end,
            actual: bytes.len(),
        });
    }
    let data: Vec<f32> = (0..n)
        .map(|i| {
            let off = offset + i * width;
            let raw = if datatype == DT_FLOAT32 { r.f32(off) } else { r.i16(off) as f32 };
            slope * raw + inter
        })
        .collect();
    let sanitized = spacing.map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 });
    Ok(Volume::new([nz, ny, nx], data)?.with_spacing(sanitized))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Writes a header field by field, independent of the reader.
    fn header(dims: [i16; 3], datatype: i16, bitpix: i16, slope: f32, inter: f32, magic: &[u8; 4]) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        h[40..42].copy_from_slice(&3i16.to_le_bytes());
        for (i, d) in dims.iter().enumerate() {
            h[42 + 2 * i..44 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        h[72..74].copy_from_slice(&bitpix.to_le_bytes());
        for (i, p) in [1.0f32, 1.5, 2.0, 2.5].iter().enumerate() {
            h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352.0f32.to_le_bytes());
        h[112..116].copy_from_slice(&slope.to_le_bytes());
        h[116..120].copy_from_slice(&inter.to_le_bytes());
        h[344..348].copy_from_slice(magic);
        h
    }

    #[test]
    fn float32_volume_round_trips_through_writer() {
        let values: Vec<f32> = (0..64).map(|i| (i as f32) * 0.25 - 3.0).collect();
        let mut bytes = header([4, 4, 4], 16, 32, 0.0, 0.0, b"n+1\0");
        for v in &values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let vol = parse(&bytes).unwrap();
        assert_eq!(vol.data(), values.as_slice());
        assert_eq!(vol.spacing(), [2.5, 2.0, 1.5]);
    }

    #[test]
    fn int16_values_are_scaled() {
        let raw: Vec<i16> = (0..80).map(|i| i as i16 - 40).collect();
        let mut bytes = header([5, 4, 4], 4, 16, 2.0, 1.0, b"n+1\0");
        for v in &raw {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let vol = parse(&bytes).unwrap();
        assert_eq!(vol.shape(), [4, 4, 5]);
        for (a, &r) in vol.data().iter().zip(&raw) {
            assert_eq!(*a, 2.0 * r as f32 + 1.0);
        }
    }

    #[test]
    fn detached_header_variant_is_rejected() {
        let mut bytes = header([4, 4, 4], 16, 32, 1.0, 0.0, b"ni1\0");
        bytes.extend(vec![0u8; 256]);
        let err = parse(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported NIfTI variant"));
    }

    #[test]
    fn four_dimensional_and_unknown_datatypes_are_rejected() {
        let mut bytes = header([4, 4, 4], 16, 32, 1.0, 0.0, b"n+1\0");
        bytes[40..42].copy_from_slice(&4i16.to_le_bytes());
        bytes.extend(vec![0u8; 256]);
        assert!(matches!(parse(&bytes), Err(Error::UnsupportedNifti(_))));

        let mut bytes = header([4, 4, 4], 64, 64, 1.0, 0.0, b"n+1\0");
        bytes.extend(vec![0u8; 512]);
        assert!(matches!(parse(&bytes), Err(Error::UnsupportedNifti(_))));
    }
}
