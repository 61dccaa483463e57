//! Instance normalization: per-sample, per-channel spatial standardization
//! without an affine part.

use crate::scalar::Scalar;
use crate::tensor::Shape;

pub fn instance_norm_forward<T: Scalar>(x: &[T], xs: Shape, eps: f64) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
    let plane = h * w;
    let inv_m = T::from_f64(1.0 / plane as f64);
    let mut out = vec![T::ZERO; xs.numel()];
    let mut means = vec![T::ZERO; n * c];
    let mut invstds = vec![T::ZERO; n * c];
    for ni in 0..n {
        for ci in 0..c {
            let base = xs.at(ni, ci, 0, 0);
            let mut mean = T::ZERO;
            for i in 0..plane {
                mean += x[base + i];
            }
            mean *= inv_m;
            let mut var = T::ZERO;
            for i in 0..plane {
                let d = x[base + i] - mean;
                var += d * d;
            }
            var *= inv_m;
            let invstd = T::ONE / (var + T::from_f64(eps)).sqrt();
            for i in 0..plane {
                out[base + i] = (x[base + i] - mean) * invstd;
            }
            means[ni * c + ci] = mean;
            invstds[ni * c + ci] = invstd;
        }
    }
    (out, means, invstds)
}

/// Backward in terms of the normalized output y:
/// gx = invstd * (go - mean(go) - y * mean(go * y)).
pub fn instance_norm_backward<T: Scalar>(
    y: &[T],
    xs: Shape,
    invstd: &[T],
    go: &[T],
    gx: &mut [T],
) {
    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
    let plane = h * w;
    let inv_m = T::from_f64(1.0 / plane as f64);
    for ni in 0..n {
        for ci in 0..c {
            let base = xs.at(ni, ci, 0, 0);
            let istd = invstd[ni * c + ci];
            let mut go_mean = T::ZERO;
            let mut goy_mean = T::ZERO;
            for i in 0..plane {
                go_mean += go[base + i];
                goy_mean += go[base + i] * y[base + i];
            }
            go_mean *= inv_m;
            goy_mean *= inv_m;
            for i in 0..plane {
                gx[base + i] += istd * (go[base + i] - go_mean - y[base + i] * goy_mean);
            }
        }
    }
}
