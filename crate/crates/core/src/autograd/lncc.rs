//! Fused local normalized cross-correlation with an analytic backward rule.
//! Moments are computed in f64 regardless of the element type.

use super::filter::box_mean;
use super::Scalar;

struct Moments {
    mx: Vec<f64>,
    my: Vec<f64>,
    cross: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    // raw variance was non-negative (false where it was clamped to zero)
    live_x: Vec<bool>,
    live_y: Vec<bool>,
}

fn moments(x: &[f64], y: &[f64], dims: [usize; 3], window: usize, eps: f64) -> Moments {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = box_mean(x, dims, window);
    let my = box_mean(y, dims, window);
    let sxx = box_mean(&xx, dims, window);
    let syy = box_mean(&yy, dims, window);
    let sxy = box_mean(&xy, dims, window);
    let n = x.len();
    let mut cross = Vec::with_capacity(n);
    let mut var_x = Vec::with_capacity(n);
    let mut var_y = Vec::with_capacity(n);
    let mut live_x = Vec::with_capacity(n);
    let mut live_y = Vec::with_capacity(n);
    for i in 0..n {
        cross.push(sxy[i] - mx[i] * my[i]);
        let vx = sxx[i] - mx[i] * mx[i];
        let vy = syy[i] - my[i] * my[i];
        live_x.push(vx >= 0.0);
        live_y.push(vy >= 0.0);
        var_x.push(vx.max(0.0) + eps);
        var_y.push(vy.max(0.0) + eps);
    }
    Moments {
        mx,
        my,
        cross,
        var_x,
        var_y,
        live_x,
        live_y,
    }
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|a| a.as_f64()).collect()
}

/// Per-voxel correlation `cov / sqrt((var_x + eps) (var_y + eps))` with
/// zero-padded box-filtered moments.
pub(crate) fn lncc_map<T: Scalar>(x: &[T], y: &[T], dims: [usize; 3], window: usize, eps: f64) -> Vec<f64> {
    let m = moments(&to_f64(x), &to_f64(y), dims, window, eps);
    (0..x.len())
        .map(|i| m.cross[i] / (m.var_x[i] * m.var_y[i]).sqrt())
        .collect()
}

pub(crate) fn lncc_mean<T: Scalar>(x: &[T], y: &[T], dims: [usize; 3], window: usize, eps: f64) -> f64 {
    let map = lncc_map(x, y, dims, window, eps);
    map.iter().sum::<f64>() / map.len() as f64
}

/// Gradients of `grad * mean(lncc_map(x, y))` with respect to `x` and `y`.
pub(crate) fn lncc_backward<T: Scalar>(
    x: &[T],
    y: &[T],
    dims: [usize; 3],
    window: usize,
    eps: f64,
    grad: f64,
) -> (Vec<T>, Vec<T>) {
    let xf = to_f64(x);
    let yf = to_f64(y);
    let m = moments(&xf, &yf, dims, window, eps);
    let n = x.len();
    let scale = grad / n as f64;
    let mut g_mx = vec![0.0; n];
    let mut g_my = vec![0.0; n];
    let mut g_sxx = vec![0.0; n];
    let mut g_syy = vec![0.0; n];
    let mut g_sxy = vec![0.0; n];
    for i in 0..n {
        let root = (m.var_x[i] * m.var_y[i]).sqrt();
        let cc = m.cross[i] / root;
        let g_c = scale / root;
        let g_a = if m.live_x[i] { -scale * cc / (2.0 * m.var_x[i]) } else { 0.0 };
        let g_b = if m.live_y[i] { -scale * cc / (2.0 * m.var_y[i]) } else { 0.0 };
        g_sxy[i] = g_c;
        g_sxx[i] = g_a;
        g_syy[i] = g_b;
        g_mx[i] = -m.my[i] * g_c - 2.0 * m.mx[i] * g_a;
        g_my[i] = -m.mx[i] * g_c - 2.0 * m.my[i] * g_b;
    }
    let b_mx = box_mean(&g_mx, dims, window);
    let b_my = box_mean(&g_my, dims, window);
    let b_sxx = box_mean(&g_sxx, dims, window);
    let b_syy = box_mean(&g_syy, dims, window);
    let b_sxy = box_mean(&g_sxy, dims, window);
    let dx = (0..n)
        .map(|i| T::from_f64_lossy(b_mx[i] + 2.0 * xf[i] * b_sxx[i] + yf[i] * b_sxy[i]))
        .collect();
    let dy = (0..n)
        .map(|i| T::from_f64_lossy(b_my[i] + 2.0 * yf[i] * b_syy[i] + xf[i] * b_sxy[i]))
        .collect();
    (dx, dy)
}
