//! Pooling, nearest upsampling and spatial cropping.

use crate::scalar::Scalar;
use crate::tensor::Shape;

/// Output extent of average pooling with right/bottom padding whose padded
/// elements are excluded from the divisor. For divisible extents this equals
/// floor((H - k)/s) + 1; otherwise one extra partial window is emitted.
pub fn avg_pool_out_extent(h: usize, k: usize, s: usize) -> usize {
    if h <= k {
        1
    } else {
        (h - k).div_ceil(s) + 1
    }
}

pub fn avg_pool2d_forward<T: Scalar>(x: &[T], xs: Shape, k: usize, s: usize) -> (Shape, Vec<T>) {
    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
    let (oh, ow) = (avg_pool_out_extent(h, k, s), avg_pool_out_extent(w, k, s));
    let os = Shape::nchw(n, c, oh, ow);
    let mut out = vec![T::ZERO; os.numel()];
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let y0 = oy * s;
                let y1 = (y0 + k).min(h);
                for ox in 0..ow {
                    let x0 = ox * s;
                    let x1 = (x0 + k).min(w);
                    let mut acc = T::ZERO;
                    for iy in y0..y1 {
                        let row = xs.at(ni, ci, iy, 0);
                        for ix in x0..x1 {
                            acc += x[row + ix];
                        }
                    }
                    let count = ((y1 - y0) * (x1 - x0)) as f64;
                    out[os.at(ni, ci, oy, ox)] = acc / T::from_f64(count);
                }
            }
        }
    }
    (os, out)
}

pub fn avg_pool2d_backward<T: Scalar>(
    xs: Shape,
    k: usize,
    s: usize,
    go: &[T],
    os: Shape,
    gx: &mut [T],
) {
    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
    let (oh, ow) = (os.h(), os.w());
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let y0 = oy * s;
                let y1 = (y0 + k).min(h);
                for ox in 0..ow {
                    let x0 = ox * s;
                    let x1 = (x0 + k).min(w);
                    let count = ((y1 - y0) * (x1 - x0)) as f64;
                    let g = go[os.at(ni, ci, oy, ox)] / T::from_f64(count);
                    for iy in y0..y1 {
                        let row = xs.at(ni, ci, iy, 0);
                        for ix in x0..x1 {
                            gx[row + ix] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Max pooling; ties resolve to the first (row-major) maximal element.
/// Returns per-output-element flat input indices for the backward pass.
pub fn max_pool2d_forward<T: Scalar>(
    x: &[T],
    xs: Shape,
    k: usize,
    s: usize,
) -> (Shape, Vec<T>, Vec<usize>) {
    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
    let (oh, ow) = (avg_pool_out_extent(h, k, s), avg_pool_out_extent(w, k, s));
    let os = Shape::nchw(n, c, oh, ow);
    let mut out = vec![T::ZERO; os.numel()];
    let mut argmax = vec![0usize; os.numel()];
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let y0 = oy * s;
                let y1 = (y0 + k).min(h);
                for ox in 0..ow {
                    let x0 = ox * s;
                    let x1 = (x0 + k).min(w);
                    let mut best = x[xs.at(ni, ci, y0, x0)];
                    let mut best_idx = xs.at(ni, ci, y0, x0);
                    for iy in y0..y1 {
                        let row = xs.at(ni, ci, iy, 0);
                        for ix in x0..x1 {
                            if x[row + ix] > best {
                                best = x[row + ix];
                                best_idx = row + ix;
                            }
                        }
                    }
                    out[os.at(ni, ci, oy, ox)] = best;
                    argmax[os.at(ni, ci, oy, ox)] = best_idx;
                }
            }
        }
    }
    (os, out, argmax)
}

pub fn global_avg_pool_forward<T: Scalar>(x: &[T], xs: Shape) -> (Shape, Vec<T>) {
    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
    let os = Shape::nchw(n, c, 1, 1);
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let mut out = vec![T::ZERO; os.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let base = xs.at(ni, ci, 0, 0);
            let mut acc = T::ZERO;
            for i in 0..h * w {
                acc += x[base + i];
            }
            out[os.at(ni, ci, 0, 0)] = acc * inv;
        }
    }
    (os, out)
}

pub fn global_avg_pool_backward<T: Scalar>(xs: Shape, go: &[T], gx: &mut [T]) {
    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
    let inv = T::from_f64(1.0 / (h * w) as f64);
    for ni in 0..n {
        for ci in 0..c {
            let g = go[ni * c + ci] * inv;
            let base = xs.at(ni, ci, 0, 0);
            for i in 0..h * w {
                gx[base + i] += g;
            }
        }
    }
}

pub fn nearest_upsample_forward<T: Scalar>(x: &[T], xs: Shape, scale: usize) -> (Shape, Vec<T>) {
    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
    let os = Shape::nchw(n, c, h * scale, w * scale);
    let mut out = vec![T::ZERO; os.numel()];
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..h * scale {
                let iy = oy / scale;
                let xrow = xs.at(ni, ci, iy, 0);
                let orow = os.at(ni, ci, oy, 0);
                for ox in 0..w * scale {
                    out[orow + ox] = x[xrow + ox / scale];
                }
            }
        }
    }
    (os, out)
}

pub fn nearest_upsample_backward<T: Scalar>(xs: Shape, scale: usize, go: &[T], gx: &mut [T]) {
    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
    let os = Shape::nchw(n, c, h * scale, w * scale);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..h * scale {
                let xrow = xs.at(ni, ci, oy / scale, 0);
                let orow = os.at(ni, ci, oy, 0);
                for ox in 0..w * scale {
                    gx[xrow + ox / scale] += go[orow + ox];
                }
            }
        }
    }
}

pub fn crop_spatial_forward<T: Scalar>(x: &[T], xs: Shape, h: usize, w: usize) -> (Shape, Vec<T>) {
    let (n, c) = (xs.n(), xs.c());
    let os = Shape::nchw(n, c, h, w);
    let mut out = vec![T::ZERO; os.numel()];
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..h {
                let xrow = xs.at(ni, ci, oy, 0);
                let orow = os.at(ni, ci, oy, 0);
                out[orow..orow + w].copy_from_slice(&x[xrow..xrow + w]);
            }
        }
    }
    (os, out)
}

pub fn crop_spatial_backward<T: Scalar>(xs: Shape, go: &[T], os: Shape, gx: &mut [T]) {
    let (n, c, h, w) = (os.n(), os.c(), os.h(), os.w());
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..h {
                let xrow = xs.at(ni, ci, oy, 0);
                let orow = os.at(ni, ci, oy, 0);
                for ox in 0..w {
                    gx[xrow + ox] += go[orow + ox];
                }
            }
        }
    }
}
