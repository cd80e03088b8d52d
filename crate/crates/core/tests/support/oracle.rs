//! Naive reference implementations, written independently of the engine.

use defae::autograd::NdArray;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], seed: u64) -> NdArray<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    NdArray::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Pearson correlation of every zero-padded `w^3` window, two-pass formulas.
pub fn naive_lncc_map(x: &[f64], y: &[f64], n: usize, w: usize, eps: f64) -> Vec<f64> {
    let r = (w / 2) as isize;
    let at = |v: &[f64], z: isize, yy: isize, xx: isize| {
        let inside = |c: isize| c >= 0 && c < n as isize;
        if inside(z) && inside(yy) && inside(xx) {
            v[(z as usize * n + yy as usize) * n + xx as usize]
        } else {
            0.0
        }
    };
    let mut out = Vec::with_capacity(n * n * n);
    for z in 0..n as isize {
        for yy in 0..n as isize {
            for xx in 0..n as isize {
                let mut a = Vec::new();
                let mut b = Vec::new();
                for dz in -r..=r {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            a.push(at(x, z + dz, yy + dy, xx + dx));
                            b.push(at(y, z + dz, yy + dy, xx + dx));
                        }
                    }
                }
                let k = a.len() as f64;
                let ma = a.iter().sum::<f64>() / k;
                let mb = b.iter().sum::<f64>() / k;
                let cov = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / k;
                let va = a.iter().map(|p| (p - ma) * (p - ma)).sum::<f64>() / k;
                let vb = b.iter().map(|q| (q - mb) * (q - mb)).sum::<f64>() / k;
                out.push(cov / ((va + eps) * (vb + eps)).sqrt());
            }
        }
    }
    out
}

/// Direct convolution over every output voxel, zero padding.
pub fn naive_conv(x: &NdArray<f64>, w: &NdArray<f64>, b: &[f64], stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, c_in, d, h, wd) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (c_out, k) = (ws[0], ws[2]);
    let out_dim = |s: usize| (s + 2 * pad - k) / stride + 1;
    let (od, oh, ow) = (out_dim(d), out_dim(h), out_dim(wd));
    let mut out = vec![0.0; n * c_out * od * oh * ow];
    for s in 0..n {
        for f in 0..c_out {
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[f];
                        for c in 0..c_in {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iz = (oz * stride + kz) as isize - pad as isize;
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                            continue;
                                        }
                                        let xi = (((s * c_in + c) * d + iz as usize) * h + iy as usize) * wd + ix as usize;
                                        let wi = (((f * c_in + c) * k + kz) * k + ky) * k + kx;
                                        acc += x.data()[xi] * w.data()[wi];
                                    }
                                }
                            }
                        }
                        out[(((s * c_out + f) * od + oz) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
    }
    (vec![n, c_out, od, oh, ow], out)
}

pub fn brute_force_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}
