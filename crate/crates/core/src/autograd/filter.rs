use super::Scalar;

/// Zero-padded `window^3` box mean over the trailing three axes of `data`,
/// applied independently to every leading `D*H*W` block.
///
/// The zero-padded box filter is symmetric, so the same routine is its own
/// adjoint and serves as the backward rule.
pub(crate) fn box_mean<T: Scalar>(data: &[T], dims: [usize; 3], window: usize) -> Vec<T> {
    let vox: usize = dims.iter().product();
    assert!(vox > 0 && data.len() % vox == 0, "box_mean: bad block size");
    let radius = window / 2;
    let mut out: Vec<T> = data.to_vec();
    let mut line = Vec::new();
    let mut prefix = Vec::new();
    let [d, h, w] = dims;
    let strides = [h * w, w, 1];
    for block in out.chunks_mut(vox) {
        for axis in 0..3 {
            let len = dims[axis];
            let stride = strides[axis];
            // enumerate starting offsets of every line along `axis`
            let (outer_a, outer_b) = match axis {
                0 => ((h, w), (w, 1)),
                1 => ((d, w), (h * w, 1)),
                _ => ((d, h), (h * w, w)),
            };
            for i in 0..outer_a.0 {
                for j in 0..outer_a.1 {
                    let start = i * outer_b.0 + j * outer_b.1;
                    line.clear();
                    line.extend((0..len).map(|t| block[start + t * stride].as_f64()));
                    prefix.clear();
                    prefix.push(0.0f64);
                    let mut acc = 0.0;
                    for &v in &line {
                        acc += v;
                        prefix.push(acc);
                    }
                    for t in 0..len {
                        let lo = t.saturating_sub(radius);
                        let hi = (t + radius + 1).min(len);
                        block[start + t * stride] = T::from_f64_lossy(prefix[hi] - prefix[lo]);
                    }
                }
            }
        }
        let norm = T::from_f64_lossy(1.0 / (window as f64).powi(3));
        block.iter_mut().for_each(|v| *v *= norm);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(data: &[f64], dims: [usize; 3], window: usize) -> Vec<f64> {
        let r = (window / 2) as isize;
        let [d, h, w] = dims;
        let mut out = vec![0.0; data.len()];
        for z in 0..d as isize {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = 0.0;
                    for dz in -r..=r {
                        for dy in -r..=r {
                            for dx in -r..=r {
                                let (zz, yy, xx) = (z + dz, y + dy, x + dx);
                                if zz >= 0 && zz < d as isize && yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                                    acc += data[((zz as usize) * h + yy as usize) * w + xx as usize];
                                }
                            }
                        }
                    }
                    out[((z as usize) * h + y as usize) * w + x as usize] = acc / (window as f64).powi(3);
                }
            }
        }
        out
    }

    #[test]
    fn impulse_spreads_one_over_27() {
        let dims = [5, 5, 5];
        let mut data = vec![0.0f64; 125];
        data[2 * 25 + 2 * 5 + 2] = 1.0;
        let out = box_mean(&data, dims, 3);
        let oracle = direct(&data, dims, 3);
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..5 {
                    let i = z * 25 + y * 5 + x;
                    let inside = (1..=3).contains(&z) && (1..=3).contains(&y) && (1..=3).contains(&x);
                    let expect = if inside { 1.0 / 27.0 } else { 0.0 };
                    assert!((out[i] - expect).abs() < 1e-12);
                    assert!((oracle[i] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matches_direct_filter_on_anisotropic_grid() {
        let dims = [4, 6, 7];
        let data: Vec<f64> = (0..168).map(|i| ((i * 37) % 17) as f64 / 17.0).collect();
        for window in [3, 5, 9] {
            let a = box_mean(&data, dims, window);
            let b = direct(&data, dims, window);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12, "window {window}");
            }
        }
    }
}
