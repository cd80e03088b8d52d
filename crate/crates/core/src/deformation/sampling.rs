//! Trilinear pull-sampling with clamp-to-border, shared by the volume-level
//! warp and the differentiable graph op.

use crate::autograd::Scalar;

#[derive(Clone, Copy)]
struct Axis {
    lo: usize,
    hi: usize,
    frac: f64,
    // derivative of the clamped coordinate w.r.t. the displacement
    slope: f64,
}

fn axis_sample(pos: f64, extent: usize) -> Axis {
    let max = (extent - 1) as f64;
    let (clamped, slope) = if pos < 0.0 {
        (0.0, 0.0)
    } else if pos > max {
        (max, 0.0)
    } else {
        (pos, 1.0)
    };
    let lo = (clamped.floor() as usize).min(extent - 1);
    let hi = (lo + 1).min(extent - 1);
    Axis {
        lo,
        hi,
        frac: clamped - lo as f64,
        slope,
    }
}

fn corners(dims: [usize; 3], z: usize, y: usize, x: usize, disp: [f64; 3]) -> [Axis; 3] {
    [
        axis_sample(z as f64 + disp[0], dims[0]),
        axis_sample(y as f64 + disp[1], dims[1]),
        axis_sample(x as f64 + disp[2], dims[2]),
    ]
}

#[inline]
fn at(dims: [usize; 3], z: usize, y: usize, x: usize) -> usize {
    (z * dims[1] + y) * dims[2] + x
}

/// Warps every channel of one sample. `src` is `channels x vox`, `field` is
/// `3 x vox` with axis order (depth, height, width).
pub(crate) fn warp_forward<T: Scalar>(src: &[T], field: &[T], dims: [usize; 3], channels: usize) -> Vec<T> {
    let vox: usize = dims.iter().product();
    debug_assert_eq!(src.len(), channels * vox);
    debug_assert_eq!(field.len(), 3 * vox);
    let mut out = vec![T::zero(); src.len()];
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let p = at(dims, z, y, x);
                let disp = [field[p].as_f64(), field[vox + p].as_f64(), field[2 * vox + p].as_f64()];
                let [az, ay, ax] = corners(dims, z, y, x, disp);
                let wz = [1.0 - az.frac, az.frac];
                let wy = [1.0 - ay.frac, ay.frac];
                let wx = [1.0 - ax.frac, ax.frac];
                let iz = [az.lo, az.hi];
                let iy = [ay.lo, ay.hi];
                let ix = [ax.lo, ax.hi];
                for c in 0..channels {
                    let chan = &src[c * vox..(c + 1) * vox];
                    let mut acc = 0.0f64;
                    for a in 0..2 {
                        for b in 0..2 {
                            for e in 0..2 {
                                acc += wz[a] * wy[b] * wx[e] * chan[at(dims, iz[a], iy[b], ix[e])].as_f64();
                            }
                        }
                    }
                    out[c * vox + p] = T::from_f64_lossy(acc);
                }
            }
        }
    }
    out
}

/// Backward of [`warp_forward`]: returns (d src, d field) for upstream `grad`.
pub(crate) fn warp_backward<T: Scalar>(
    src: &[T],
    field: &[T],
    dims: [usize; 3],
    channels: usize,
    grad: &[T],
    need_src: bool,
    need_field: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let vox: usize = dims.iter().product();
    let mut dsrc = need_src.then(|| vec![0.0f64; src.len()]);
    let mut dfield = need_field.then(|| vec![0.0f64; field.len()]);
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let p = at(dims, z, y, x);
                let disp = [field[p].as_f64(), field[vox + p].as_f64(), field[2 * vox + p].as_f64()];
                let [az, ay, ax] = corners(dims, z, y, x, disp);
                let wz = [1.0 - az.frac, az.frac];
                let wy = [1.0 - ay.frac, ay.frac];
                let wx = [1.0 - ax.frac, ax.frac];
                let iz = [az.lo, az.hi];
                let iy = [ay.lo, ay.hi];
                let ix = [ax.lo, ax.hi];
                // d weight / d frac along each axis
                let dw = [-1.0, 1.0];
                for c in 0..channels {
                    let g = grad[c * vox + p].as_f64();
                    if g == 0.0 {
                        continue;
                    }
                    let chan = &src[c * vox..(c + 1) * vox];
                    let mut gz = 0.0;
                    let mut gy = 0.0;
                    let mut gx = 0.0;
                    for a in 0..2 {
                        for b in 0..2 {
                            for e in 0..2 {
                                let idx = at(dims, iz[a], iy[b], ix[e]);
                                if let Some(ds) = dsrc.as_mut() {
                                    ds[c * vox + idx] += g * wz[a] * wy[b] * wx[e];
                                }
                                if dfield.is_some() {
                                    let v = chan[idx].as_f64();
                                    gz += dw[a] * wy[b] * wx[e] * v;
                                    gy += wz[a] * dw[b] * wx[e] * v;
                                    gx += wz[a] * wy[b] * dw[e] * v;
                                }
                            }
                        }
                    }
                    if let Some(df) = dfield.as_mut() {
                        df[p] += g * gz * az.slope;
                        df[vox + p] += g * gy * ay.slope;
                        df[2 * vox + p] += g * gx * ax.slope;
                    }
                }
            }
        }
    }
    let cast = |v: Vec<f64>| v.into_iter().map(T::from_f64_lossy).collect::<Vec<T>>();
    (dsrc.map(cast), dfield.map(cast))
}

/// Nearest-neighbour pull-sampling for label grids.
pub(crate) fn warp_nearest<L: Copy>(src: &[L], field: &[f32], dims: [usize; 3]) -> Vec<L> {
    let vox: usize = dims.iter().product();
    let mut out = Vec::with_capacity(vox);
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let p = at(dims, z, y, x);
                let q = [
                    z as f64 + field[p] as f64,
                    y as f64 + field[vox + p] as f64,
                    x as f64 + field[2 * vox + p] as f64,
                ];
                let mut idx = [0usize; 3];
                for a in 0..3 {
                    idx[a] = q[a].round().clamp(0.0, (dims[a] - 1) as f64) as usize;
                }
                out.push(src[at(dims, idx[0], idx[1], idx[2])]);
            }
        }
    }
    out
}
