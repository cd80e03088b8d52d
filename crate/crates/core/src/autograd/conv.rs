//! 3-D convolution kernels (cross-correlation, no kernel flip) lowered to
//! GEMM through im2col / col2im.

use crate::error::{Error, Result};

use super::scalar::matmul;
use super::tensor::dims5;
use super::{NdArray, Scalar};

/// Output extent of a strided, zero-padded correlation along one axis.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

/// Output extent of the transposed correlation along one axis.
pub fn conv_transpose_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if stride == 0 || kernel == 0 || input == 0 {
        return None;
    }
    let full = (input - 1) * stride + kernel;
    (full > 2 * padding).then(|| full - 2 * padding)
}

/// Geometry of a correlation from a `channels x input` grid to `output`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.channels * self.kernel.pow(3)
    }

    fn cols(&self) -> usize {
        self.output.iter().product()
    }

    fn input_len(&self) -> usize {
        self.channels * self.input.iter().product::<usize>()
    }
}

/// Gathers the patches of one sample into a `(C*k^3) x P` matrix.
pub(crate) fn im2col<T: Scalar>(input: &[T], g: &ConvGeom, col: &mut [T]) {
    debug_assert_eq!(input.len(), g.input_len());
    debug_assert_eq!(col.len(), g.rows() * g.cols());
    let [d, h, w] = g.input;
    let [od, oh, ow] = g.output;
    let k = g.kernel;
    let p = g.padding as isize;
    let s = g.stride as isize;
    let ncols = g.cols();
    let mut row = 0;
    for c in 0..g.channels {
        let chan = &input[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut col[row * ncols..(row + 1) * ncols];
                    let mut idx = 0;
                    for oz in 0..od {
                        let iz = oz as isize * s + kz as isize - p;
                        let z_ok = iz >= 0 && iz < d as isize;
                        for oy in 0..oh {
                            let iy = oy as isize * s + ky as isize - p;
                            if !z_ok || iy < 0 || iy >= h as isize {
                                dst[idx..idx + ow].iter_mut().for_each(|v| *v = T::zero());
                                idx += ow;
                                continue;
                            }
                            let base = (iz as usize * h + iy as usize) * w;
                            for ox in 0..ow {
                                let ix = ox as isize * s + kx as isize - p;
                                dst[idx] = if ix >= 0 && ix < w as isize {
                                    chan[base + ix as usize]
                                } else {
                                    T::zero()
                                };
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a patch matrix back onto the grid.
pub(crate) fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, out: &mut [T]) {
    debug_assert_eq!(out.len(), g.input_len());
    debug_assert_eq!(col.len(), g.rows() * g.cols());
    let [d, h, w] = g.input;
    let [od, oh, ow] = g.output;
    let k = g.kernel;
    let p = g.padding as isize;
    let s = g.stride as isize;
    let ncols = g.cols();
    let mut row = 0;
    for c in 0..g.channels {
        let chan = &mut out[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let src = &col[row * ncols..(row + 1) * ncols];
                    let mut idx = 0;
                    for oz in 0..od {
                        let iz = oz as isize * s + kz as isize - p;
                        let z_ok = iz >= 0 && iz < d as isize;
                        for oy in 0..oh {
                            let iy = oy as isize * s + ky as isize - p;
                            if !z_ok || iy < 0 || iy >= h as isize {
                                idx += ow;
                                continue;
                            }
                            let base = (iz as usize * h + iy as usize) * w;
                            for ox in 0..ow {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    chan[base + ix as usize] += src[idx];
                                }
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Stride-1 correlations with at most this many output channels skip
/// im2col: a GEMM with so few rows is bound by the patch-matrix traffic.
const DIRECT_MAX_OUT: usize = 4;

fn use_direct(g: &ConvGeom, out_channels: usize) -> bool {
    g.stride == 1 && out_channels <= DIRECT_MAX_OUT
}

/// Contiguous runs `(out_start, in_start, len)` pairing output voxels with
/// the input voxels read at each kernel offset (stride 1), one list per
/// offset in kernel order.
fn shift_runs(g: &ConvGeom) -> Vec<Vec<(usize, usize, usize)>> {
    let [d, h, w] = g.input;
    let [od, oh, ow] = g.output;
    let k = g.kernel;
    let p = g.padding as isize;
    let range = |off: isize, out: usize, inp: usize| {
        let lo = (-off).max(0) as usize;
        let hi = (inp as isize - off).clamp(0, out as isize) as usize;
        (lo, hi.max(lo))
    };
    let mut all = Vec::with_capacity(k * k * k);
    for kz in 0..k {
        for ky in 0..k {
            for kx in 0..k {
                let (dz, dy, dx) = (kz as isize - p, ky as isize - p, kx as isize - p);
                let (z0, z1) = range(dz, od, d);
                let (y0, y1) = range(dy, oh, h);
                let (x0, x1) = range(dx, ow, w);
                let mut runs = Vec::new();
                if x1 > x0 {
                    for oz in z0..z1 {
                        for oy in y0..y1 {
                            let o = (oz * oh + oy) * ow + x0;
                            let iz = (oz as isize + dz) as usize;
                            let iy = (oy as isize + dy) as usize;
                            let i = (iz * h + iy) * w + (x0 as isize + dx) as usize;
                            runs.push((o, i, x1 - x0));
                        }
                    }
                }
                all.push(runs);
            }
        }
    }
    all
}

/// `out[f] += sum_c,off w[f,c,off] * shift(x[c])` for one sample.
fn direct_forward<T: Scalar>(x: &[T], w: &[T], out: &mut [T], f: usize, g: &ConvGeom, runs: &[Vec<(usize, usize, usize)>]) {
    let vin: usize = g.input.iter().product();
    let vout = g.cols();
    let k3 = runs.len();
    for fi in 0..f {
        let dst = &mut out[fi * vout..(fi + 1) * vout];
        for c in 0..g.channels {
            let src = &x[c * vin..(c + 1) * vin];
            for (off, rs) in runs.iter().enumerate() {
                let wv = w[(fi * g.channels + c) * k3 + off];
                for &(o, i, len) in rs {
                    for (a, &b) in dst[o..o + len].iter_mut().zip(&src[i..i + len]) {
                        *a += wv * b;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`direct_forward`] in `x`.
fn direct_input_grad<T: Scalar>(go: &[T], w: &[T], dx: &mut [T], f: usize, g: &ConvGeom, runs: &[Vec<(usize, usize, usize)>]) {
    let vin: usize = g.input.iter().product();
    let vout = g.cols();
    let k3 = runs.len();
    for c in 0..g.channels {
        let dst = &mut dx[c * vin..(c + 1) * vin];
        for fi in 0..f {
            let src = &go[fi * vout..(fi + 1) * vout];
            for (off, rs) in runs.iter().enumerate() {
                let wv = w[(fi * g.channels + c) * k3 + off];
                for &(o, i, len) in rs {
                    for (a, &b) in dst[i..i + len].iter_mut().zip(&src[o..o + len]) {
                        *a += wv * b;
                    }
                }
            }
        }
    }
}

/// Dot product with eight fixed partial sums so the loop vectorizes while
/// the summation order stays deterministic.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    lanes.iter().fold(tail, |acc, &v| acc + v)
}

/// Kernel gradient of [`direct_forward`], accumulated into `dw`.
fn direct_kernel_grad<T: Scalar>(x: &[T], go: &[T], dw: &mut [T], f: usize, g: &ConvGeom, runs: &[Vec<(usize, usize, usize)>]) {
    let vin: usize = g.input.iter().product();
    let vout = g.cols();
    let k3 = runs.len();
    for fi in 0..f {
        let gsrc = &go[fi * vout..(fi + 1) * vout];
        for c in 0..g.channels {
            let xsrc = &x[c * vin..(c + 1) * vin];
            for (off, rs) in runs.iter().enumerate() {
                let mut acc = T::zero();
                for &(o, i, len) in rs {
                    acc += dot(&gsrc[o..o + len], &xsrc[i..i + len]);
                }
                dw[(fi * g.channels + c) * k3 + off] += acc;
            }
        }
    }
}

fn check_kernel(kernel: &[usize], bias: &[usize], bias_len: usize) -> Result<(usize, usize, usize)> {
    let (f, c, [kd, kh, kw]) = dims5(kernel)?;
    if kd != kh || kh != kw {
        return Err(Error::Shape(format!("kernel must be cubic, got {kernel:?}")));
    }
    if bias != [bias_len] {
        return Err(Error::Shape(format!("bias shape {bias:?}, expected [{bias_len}]")));
    }
    Ok((f, c, kd))
}

/// Geometry plus validated shapes for a forward correlation.
pub(crate) fn conv_geometry(
    input: &[usize],
    kernel: &[usize],
    bias: &[usize],
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, ConvGeom)> {
    let (n, c, spatial) = dims5(input)?;
    let (f, kc, k) = check_kernel(kernel, bias, kernel.first().copied().unwrap_or(0))?;
    if kc != c {
        return Err(Error::Shape(format!(
            "channel mismatch: input has {c} channels, kernel expects {kc}"
        )));
    }
    let mut output = [0; 3];
    for a in 0..3 {
        output[a] = conv_output_size(spatial[a], k, stride, padding).ok_or_else(|| {
            Error::Shape(format!(
                "non-positive output size: axis {a} extent {} with kernel {k}, padding {padding}",
                spatial[a]
            ))
        })?;
    }
    Ok((
        n,
        f,
        ConvGeom {
            channels: c,
            kernel: k,
            stride,
            padding,
            input: spatial,
            output,
        },
    ))
}

/// Geometry for a transposed correlation. The returned [`ConvGeom`]
/// describes the *matching forward* correlation, i.e. its `input` is the
/// transposed output grid and its `output` is the transposed input grid.
pub(crate) fn conv_transpose_geometry(
    input: &[usize],
    kernel: &[usize],
    bias: &[usize],
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, ConvGeom)> {
    let (n, fin, spatial) = dims5(input)?;
    let kshape = dims5(kernel)?;
    let (kf, cout, k) = check_kernel(kernel, bias, kshape.1)?;
    if kf != fin {
        return Err(Error::Shape(format!(
            "channel mismatch: input has {fin} channels, kernel expects {kf}"
        )));
    }
    let mut full = [0; 3];
    for a in 0..3 {
        full[a] = conv_transpose_output_size(spatial[a], k, stride, padding).ok_or_else(|| {
            Error::Shape(format!(
                "non-positive output size: axis {a} extent {} with kernel {k}, padding {padding}",
                spatial[a]
            ))
        })?;
    }
    Ok((
        n,
        cout,
        ConvGeom {
            channels: cout,
            kernel: k,
            stride,
            padding,
            input: full,
            output: spatial,
        },
    ))
}

pub(crate) fn conv3d_forward<T: Scalar>(
    x: &NdArray<T>,
    kernel: &NdArray<T>,
    bias: &NdArray<T>,
    stride: usize,
    padding: usize,
) -> Result<NdArray<T>> {
    let (n, f, g) = conv_geometry(x.shape(), kernel.shape(), bias.shape(), stride, padding)?;
    let p = g.cols();
    let rows = g.rows();
    let in_len = g.input_len();
    let mut out = vec![T::zero(); n * f * p];
    let direct = use_direct(&g, f);
    let runs = if direct { shift_runs(&g) } else { Vec::new() };
    let mut col = vec![T::zero(); if direct { 0 } else { rows * p }];
    for s in 0..n {
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        let dst = &mut out[s * f * p..(s + 1) * f * p];
        for (fi, chunk) in dst.chunks_mut(p).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias.data()[fi]);
        }
        if direct {
            direct_forward(xs, kernel.data(), dst, f, &g, &runs);
        } else {
            im2col(xs, &g, &mut col);
            matmul(f, rows, p, kernel.data(), false, &col, false, dst, true);
        }
    }
    let [od, oh, ow] = g.output;
    NdArray::from_vec(&[n, f, od, oh, ow], out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<NdArray<T>>,
    pub kernel: Option<NdArray<T>>,
    pub bias: Option<NdArray<T>>,
}

pub(crate) fn conv3d_backward<T: Scalar>(
    x: &NdArray<T>,
    kernel: &NdArray<T>,
    bias: &NdArray<T>,
    stride: usize,
    padding: usize,
    grad_out: &NdArray<T>,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let (n, f, g) = conv_geometry(x.shape(), kernel.shape(), bias.shape(), stride, padding)?;
    let p = g.cols();
    let rows = g.rows();
    let in_len = g.input_len();
    let gout = grad_out.data();
    let mut dx = need[0].then(|| vec![T::zero(); x.len()]);
    let mut dw = need[1].then(|| vec![T::zero(); kernel.len()]);
    let mut db = need[2].then(|| vec![T::zero(); f]);
    let direct = use_direct(&g, f);
    let runs = if direct { shift_runs(&g) } else { Vec::new() };
    let mut col = vec![T::zero(); if direct { 0 } else { rows * p }];
    for s in 0..n {
        let go = &gout[s * f * p..(s + 1) * f * p];
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        if direct {
            if let Some(dw) = dw.as_mut() {
                direct_kernel_grad(xs, go, dw, f, &g, &runs);
            }
            if let Some(dx) = dx.as_mut() {
                direct_input_grad(go, kernel.data(), &mut dx[s * in_len..(s + 1) * in_len], f, &g, &runs);
            }
        }
        if let Some(dw) = dw.as_mut().filter(|_| !direct) {
            im2col(xs, &g, &mut col);
            matmul(f, p, rows, go, false, &col, true, dw, true);
        }
        if let Some(db) = db.as_mut() {
            for (fi, chunk) in go.chunks(p).enumerate() {
                db[fi] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut().filter(|_| !direct) {
            matmul(rows, f, p, kernel.data(), true, go, false, &mut col, false);
            col2im(&col, &g, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    Ok(ConvGrads {
        input: dx.map(|v| NdArray::from_vec(x.shape(), v)).transpose()?,
        kernel: dw.map(|v| NdArray::from_vec(kernel.shape(), v)).transpose()?,
        bias: db.map(|v| NdArray::from_vec(bias.shape(), v)).transpose()?,
    })
}

pub(crate) fn conv_transpose3d_forward<T: Scalar>(
    y: &NdArray<T>,
    kernel: &NdArray<T>,
    bias: &NdArray<T>,
    stride: usize,
    padding: usize,
) -> Result<NdArray<T>> {
    let (n, cout, g) = conv_transpose_geometry(y.shape(), kernel.shape(), bias.shape(), stride, padding)?;
    let fin = kernel.shape()[0];
    let p = g.cols();
    let rows = g.rows();
    let out_len = g.input_len();
    let vox: usize = g.input.iter().product();
    let mut out = vec![T::zero(); n * out_len];
    let mut col = vec![T::zero(); rows * p];
    for s in 0..n {
        let ys = &y.data()[s * fin * p..(s + 1) * fin * p];
        matmul(rows, fin, p, kernel.data(), true, ys, false, &mut col, false);
        let dst = &mut out[s * out_len..(s + 1) * out_len];
        for (ci, chunk) in dst.chunks_mut(vox).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias.data()[ci]);
        }
        col2im(&col, &g, dst);
    }
    let [d, h, w] = g.input;
    NdArray::from_vec(&[n, cout, d, h, w], out)
}

pub(crate) fn conv_transpose3d_backward<T: Scalar>(
    y: &NdArray<T>,
    kernel: &NdArray<T>,
    bias: &NdArray<T>,
    stride: usize,
    padding: usize,
    grad_out: &NdArray<T>,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let (n, cout, g) = conv_transpose_geometry(y.shape(), kernel.shape(), bias.shape(), stride, padding)?;
    let fin = kernel.shape()[0];
    let p = g.cols();
    let rows = g.rows();
    let out_len = g.input_len();
    let vox: usize = g.input.iter().product();
    let gout = grad_out.data();
    let mut dy = need[0].then(|| vec![T::zero(); y.len()]);
    let mut dw = need[1].then(|| vec![T::zero(); kernel.len()]);
    let mut db = need[2].then(|| vec![T::zero(); cout]);
    let mut col = vec![T::zero(); rows * p];
    for s in 0..n {
        let go = &gout[s * out_len..(s + 1) * out_len];
        if let Some(db) = db.as_mut() {
            for (ci, chunk) in go.chunks(vox).enumerate() {
                db[ci] += chunk.iter().copied().sum::<T>();
            }
        }
        if dy.is_none() && dw.is_none() {
            continue;
        }
        im2col(go, &g, &mut col);
        if let Some(dy) = dy.as_mut() {
            matmul(fin, rows, p, kernel.data(), false, &col, false, &mut dy[s * fin * p..(s + 1) * fin * p], false);
        }
        if let Some(dw) = dw.as_mut() {
            let ys = &y.data()[s * fin * p..(s + 1) * fin * p];
            matmul(fin, p, rows, ys, false, &col, true, dw, true);
        }
    }
    Ok(ConvGrads {
        input: dy.map(|v| NdArray::from_vec(y.shape(), v)).transpose()?,
        kernel: dw.map(|v| NdArray::from_vec(kernel.shape(), v)).transpose()?,
        bias: db.map(|v| NdArray::from_vec(bias.shape(), v)).transpose()?,
    })
}
